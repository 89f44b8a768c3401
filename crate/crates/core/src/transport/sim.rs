//! Deterministic discrete-event network.
//!
//! One [`SimNetwork`] owns simulated time, a seeded RNG and an event queue
//! ordered by `(time, insertion order)`. Nodes attach as [`SimEndpoint`]s,
//! each with its own clock offset; directed [`SimLink`]s between endpoint
//! addresses carry datagrams with a sampled delay and loss.
//!
//! Every endpoint also routes: a datagram addressed to another node is sent
//! on over the matching link, and one carrying an SRH with Segments Left
//! above zero is steered to its next segment. Multi-segment paths thus
//! accumulate per-hop delays.
//!
//! The scheduler is single-threaded: only the thread calling
//! [`SimNetwork::run_until_idle`] / [`SimNetwork::run_until`] advances time.
//! Consumers run on that thread and may send from inside `deliver`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::net::Ipv6Addr;
use std::ops::ControlFlow;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{
    DatagramConsumer, FilterSpec, FilterStats, FilterTable, Registration, Tick, TimerHandle,
    Transport, TransportError,
};
use crate::codec::{IPPROTO_ROUTING, IPV6_HEADER_LEN};
use crate::timebase::{Clock, SimTime};

/// Default start of simulated time: 2023-11-14T22:13:20Z.
pub const DEFAULT_START_UNIX_NS: i64 = 1_700_000_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModel {
    Constant { ns: u64 },
    /// Uniform over `[min_ns, max_ns]`, inclusive.
    Uniform { min_ns: u64, max_ns: u64 },
}

impl DelayModel {
    pub fn constant(d: Duration) -> Self {
        DelayModel::Constant {
            ns: d.as_nanos() as u64,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            DelayModel::Constant { ns } => ns,
            DelayModel::Uniform { min_ns, max_ns } => rng.random_range(min_ns..=max_ns),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimLink {
    pub delay: DelayModel,
    #[serde(default)]
    pub loss_prob: f64,
    /// Allow later sends to overtake earlier ones when delays vary.
    #[serde(default)]
    pub reorder: bool,
}

impl SimLink {
    pub fn constant(d: Duration) -> Self {
        SimLink {
            delay: DelayModel::constant(d),
            loss_prob: 0.0,
            reorder: false,
        }
    }

    pub fn with_loss(mut self, p: f64) -> Self {
        self.loss_prob = p;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkStats {
    pub sent: u64,
    pub lost: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Send,
    Lost,
    Deliver,
    Timer,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceEntry {
    pub at: i64,
    pub kind: TraceKind,
    pub from: Ipv6Addr,
    pub to: Ipv6Addr,
    pub len: usize,
}

struct LinkState {
    cfg: SimLink,
    last_delivery: i64,
    stats: LinkStats,
}

enum EventKind {
    Deliver {
        from: Ipv6Addr,
        to: Ipv6Addr,
        bytes: Vec<u8>,
    },
    Timer {
        id: u64,
    },
}

struct Event {
    at: i64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

struct TimerEntry {
    interval: u64,
    owner: Ipv6Addr,
    handle: TimerHandle,
    /// Taken out while the tick runs.
    tick: Option<Tick>,
}

struct State {
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    links: HashMap<(Ipv6Addr, Ipv6Addr), LinkState>,
    endpoints: HashMap<Ipv6Addr, Arc<SimEndpoint>>,
    timers: HashMap<u64, TimerEntry>,
    next_timer: u64,
    trace: Option<Vec<TraceEntry>>,
}

impl State {
    fn push(&mut self, at: i64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Event { at, seq, kind }));
    }

    fn log(&mut self, at: i64, kind: TraceKind, from: Ipv6Addr, to: Ipv6Addr, len: usize) {
        if let Some(t) = &mut self.trace {
            t.push(TraceEntry {
                at,
                kind,
                from,
                to,
                len,
            });
        }
    }
}

pub struct SimNetwork {
    time: Arc<SimTime>,
    state: Mutex<State>,
}

impl SimNetwork {
    pub fn new(seed: u64) -> Arc<Self> {
        Self::with_start(seed, DEFAULT_START_UNIX_NS)
    }

    pub fn with_start(seed: u64, start_unix_ns: i64) -> Arc<Self> {
        Arc::new(SimNetwork {
            time: SimTime::new(start_unix_ns),
            state: Mutex::new(State {
                rng: ChaCha8Rng::seed_from_u64(seed),
                queue: BinaryHeap::new(),
                seq: 0,
                links: HashMap::new(),
                endpoints: HashMap::new(),
                timers: HashMap::new(),
                next_timer: 0,
                trace: None,
            }),
        })
    }

    pub fn time(&self) -> &Arc<SimTime> {
        &self.time
    }

    pub fn now(&self) -> i64 {
        self.time.now()
    }

    /// Starts recording a trace of sends, losses, deliveries and ticks.
    pub fn enable_trace(&self) {
        self.state.lock().unwrap().trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.state.lock().unwrap().trace.clone().unwrap_or_default()
    }

    /// Attaches a node at `addr` whose clock runs `clock_offset_ns` ahead of
    /// simulated time.
    pub fn add_endpoint(self: &Arc<Self>, addr: Ipv6Addr, clock_offset_ns: i64) -> Arc<SimEndpoint> {
        let ep = Arc::new(SimEndpoint {
            net: Arc::downgrade(self),
            addr,
            clock: Clock::simulated(self.time.clone()).with_offset(clock_offset_ns),
            filters: FilterTable::default(),
        });
        self.state.lock().unwrap().endpoints.insert(addr, ep.clone());
        ep
    }

    /// Installs (or replaces) the directed link `from -> to`.
    pub fn connect(&self, from: Ipv6Addr, to: Ipv6Addr, link: SimLink) {
        self.state.lock().unwrap().links.insert(
            (from, to),
            LinkState {
                cfg: link,
                last_delivery: i64::MIN,
                stats: LinkStats::default(),
            },
        );
    }

    /// Installs `link` in both directions.
    pub fn connect_both(&self, a: Ipv6Addr, b: Ipv6Addr, link: SimLink) {
        self.connect(a, b, link);
        self.connect(b, a, link);
    }

    pub fn link_stats(&self, from: Ipv6Addr, to: Ipv6Addr) -> Option<LinkStats> {
        self.state
            .lock()
            .unwrap()
            .links
            .get(&(from, to))
            .map(|l| l.stats)
    }

    fn send(&self, from: Ipv6Addr, to: Ipv6Addr, bytes: &[u8]) -> Result<(), TransportError> {
        let now = self.time.now();
        let mut st = self.state.lock().unwrap();
        if !st.endpoints.contains_key(&to) {
            return Err(TransportError::Unroutable(to));
        }
        let st = &mut *st;
        let link = st
            .links
            .get_mut(&(from, to))
            .ok_or(TransportError::Unroutable(to))?;
        link.stats.sent += 1;
        let lost = link.cfg.loss_prob > 0.0 && st.rng.random::<f64>() < link.cfg.loss_prob;
        if lost {
            link.stats.lost += 1;
            st.log(now, TraceKind::Lost, from, to, bytes.len());
            return Ok(());
        }
        let delay = link.cfg.delay.sample(&mut st.rng) as i64;
        let mut at = now + delay;
        if !link.cfg.reorder {
            at = at.max(link.last_delivery);
        }
        link.last_delivery = at;
        st.log(now, TraceKind::Send, from, to, bytes.len());
        st.push(
            at,
            EventKind::Deliver {
                from,
                to,
                bytes: bytes.to_vec(),
            },
        );
        Ok(())
    }

    fn schedule(&self, owner: Ipv6Addr, interval: Duration, tick: Tick) -> TimerHandle {
        let handle = TimerHandle::new();
        let interval = (interval.as_nanos() as u64).max(1);
        let mut st = self.state.lock().unwrap();
        let id = st.next_timer;
        st.next_timer += 1;
        st.timers.insert(
            id,
            TimerEntry {
                interval,
                owner,
                handle: handle.clone(),
                tick: Some(tick),
            },
        );
        let at = self.time.now() + interval as i64;
        st.push(at, EventKind::Timer { id });
        handle
    }

    /// Time of the next pending event.
    pub fn next_event_at(&self) -> Option<i64> {
        self.state
            .lock()
            .unwrap()
            .queue
            .peek()
            .map(|Reverse(e)| e.at)
    }

    pub fn pending_events(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    /// Processes one event. Returns false when the queue is empty.
    pub fn step(&self) -> bool {
        let ev = {
            let mut st = self.state.lock().unwrap();
            match st.queue.pop() {
                Some(Reverse(ev)) => ev,
                None => return false,
            }
        };
        self.time.advance_to(ev.at);
        match ev.kind {
            EventKind::Deliver { from, to, mut bytes } => {
                let ep = {
                    let mut st = self.state.lock().unwrap();
                    if let Some(l) = st.links.get_mut(&(from, to)) {
                        l.stats.delivered += 1;
                    }
                    st.log(ev.at, TraceKind::Deliver, from, to, bytes.len());
                    st.endpoints.get(&to).cloned()
                };
                if let Some(ep) = ep {
                    match route(&mut bytes, to) {
                        Hop::Local => {
                            ep.filters.dispatch(&bytes);
                        }
                        Hop::Forward(next) => {
                            if let Err(e) = self.send(to, next, &bytes) {
                                log::debug!("sim: {to} cannot forward: {e}");
                            }
                        }
                        Hop::Expired => {}
                    }
                }
            }
            EventKind::Timer { id } => {
                let taken = {
                    let mut st = self.state.lock().unwrap();
                    let owner = st.timers.get(&id).map(|t| t.owner);
                    if let Some(owner) = owner {
                        st.log(ev.at, TraceKind::Timer, owner, owner, 0);
                    }
                    st.timers.get_mut(&id).and_then(|t| {
                        if t.handle.is_cancelled() {
                            None
                        } else {
                            t.tick.take()
                        }
                    })
                };
                let Some(mut tick) = taken else {
                    self.state.lock().unwrap().timers.remove(&id);
                    return true;
                };
                let flow = tick();
                let mut st = self.state.lock().unwrap();
                let keep = flow == ControlFlow::Continue(())
                    && st.timers.get(&id).is_some_and(|t| !t.handle.is_cancelled());
                if keep {
                    let t = st.timers.get_mut(&id).expect("timer present");
                    t.tick = Some(tick);
                    let next = ev.at + t.interval as i64;
                    st.push(next, EventKind::Timer { id });
                } else {
                    st.timers.remove(&id);
                }
            }
        }
        true
    }

    /// Processes events until the queue is empty and returns how many ran.
    /// A periodic timer that never stops keeps the queue non-empty; bound
    /// such runs with [`SimNetwork::run_until`].
    pub fn run_until_idle(&self) -> usize {
        let mut n = 0;
        while self.step() {
            n += 1;
        }
        n
    }

    /// Processes every event scheduled at or before `t`, then moves time
    /// to `t`.
    pub fn run_until(&self, t: i64) -> usize {
        let mut n = 0;
        while self.next_event_at().is_some_and(|at| at <= t) {
            self.step();
            n += 1;
        }
        self.time.advance_to(t);
        n
    }

    pub fn run_for(&self, d: Duration) -> usize {
        self.run_until(self.now() + d.as_nanos() as i64)
    }
}

enum Hop {
    Local,
    Forward(Ipv6Addr),
    Expired,
}

/// Forwarding decision at node `here`. A packet addressed elsewhere is
/// routed on; one addressed here with Segments Left > 0 gets the SRv6
/// endpoint treatment (next segment becomes the destination). Forwarded
/// packets lose one hop of Hop Limit.
fn route(bytes: &mut [u8], here: Ipv6Addr) -> Hop {
    if bytes.len() < IPV6_HEADER_LEN {
        return Hop::Local;
    }
    let mut dst = [0u8; 16];
    dst.copy_from_slice(&bytes[24..40]);
    let mut next = (Ipv6Addr::from(dst) != here).then_some(Ipv6Addr::from(dst));
    let srh = IPV6_HEADER_LEN;
    if next.is_none()
        && bytes[6] == IPPROTO_ROUTING
        && bytes.len() >= srh + 8
        && bytes[srh + 2] == crate::codec::ROUTING_TYPE_SRH
        && bytes[srh + 3] > 0
    {
        let sl = bytes[srh + 3] - 1;
        let at = srh + 8 + 16 * sl as usize;
        if bytes.len() < at + 16 {
            return Hop::Local;
        }
        bytes[srh + 3] = sl;
        bytes.copy_within(at..at + 16, 24);
        dst.copy_from_slice(&bytes[24..40]);
        next = Some(Ipv6Addr::from(dst));
    }
    match next {
        None => Hop::Local,
        Some(_) if bytes[7] <= 1 => Hop::Expired,
        Some(n) => {
            bytes[7] -= 1;
            Hop::Forward(n)
        }
    }
}

/// A node attached to a [`SimNetwork`].
pub struct SimEndpoint {
    net: std::sync::Weak<SimNetwork>,
    addr: Ipv6Addr,
    clock: Clock,
    filters: FilterTable,
}

impl SimEndpoint {
    pub fn addr(&self) -> Ipv6Addr {
        self.addr
    }

    fn net(&self) -> Arc<SimNetwork> {
        self.net.upgrade().expect("simulated network dropped")
    }
}

impl Transport for SimEndpoint {
    fn clock(&self) -> Clock {
        self.clock.clone()
    }

    fn send(&self, next_hop: Ipv6Addr, datagram: &[u8]) -> Result<(), TransportError> {
        self.net().send(self.addr, next_hop, datagram)
    }

    fn register(
        &self,
        filter: FilterSpec,
        consumer: Arc<dyn DatagramConsumer>,
    ) -> Result<Registration, TransportError> {
        Ok(self.filters.register(filter, consumer))
    }

    fn unregister(&self, reg: Registration) {
        self.filters.unregister(reg);
    }

    fn set_kernel_sink(&self, sink: Option<Arc<dyn DatagramConsumer>>) {
        self.filters.set_kernel_sink(sink);
    }

    fn schedule(&self, interval: Duration, tick: Tick) -> TimerHandle {
        self.net().schedule(self.addr, interval, tick)
    }

    fn filter_stats(&self) -> FilterStats {
        self.filters.stats()
    }
}
