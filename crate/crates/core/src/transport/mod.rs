//! Datagram transports behind the sender and reflector.
//!
//! Every backend speaks whole IPv6 datagrams and implements the same
//! filter contract: a consumer registered with a [`FilterSpec`] receives
//! all and only the datagrams whose UDP destination port (and, when set,
//! IPv6 destination address) match. Everything else is counted and handed
//! to the optional kernel-path sink.

use std::net::Ipv6Addr;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use crate::codec::DatagramView;
use crate::timebase::Clock;

mod raw;
pub mod sim;
mod udp;

pub use raw::RawIpv6Transport;
pub use sim::{DelayModel, SimEndpoint, SimLink, SimNetwork, TraceEntry, TraceKind};
pub use udp::UdpTransport;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("no route to {0}")]
    Unroutable(Ipv6Addr),
    #[error("raw IPv6 sockets require CAP_NET_RAW")]
    PrivilegeRequired,
    #[error("malformed datagram: {0}")]
    Malformed(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Receives datagrams handed over by a transport.
pub trait DatagramConsumer: Send + Sync {
    fn deliver(&self, datagram: &[u8]);
}

impl<F> DatagramConsumer for F
where
    F: Fn(&[u8]) + Send + Sync,
{
    fn deliver(&self, datagram: &[u8]) {
        self(datagram)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterSpec {
    /// `None` matches any destination address.
    pub local_addr: Option<Ipv6Addr>,
    pub local_port: u16,
}

impl FilterSpec {
    pub fn new(local_addr: Option<Ipv6Addr>, local_port: u16) -> Self {
        FilterSpec {
            local_addr,
            local_port,
        }
    }

    pub fn matches(&self, dst_addr: Ipv6Addr, dst_port: u16) -> bool {
        dst_port == self.local_port && self.local_addr.is_none_or(|a| a == dst_addr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Registration(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterStats {
    pub received: u64,
    pub matched: u64,
    pub unmatched: u64,
}

/// Periodic task control. Cancelling is idempotent.
#[derive(Debug, Clone, Default)]
pub struct TimerHandle {
    cancelled: Arc<AtomicBool>,
}

impl TimerHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Release);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Acquire)
    }
}

pub type Tick = Box<dyn FnMut() -> ControlFlow<()> + Send>;

pub trait Transport: Send + Sync {
    /// Clock of the node this transport belongs to.
    fn clock(&self) -> Clock;

    /// Sends a whole IPv6 datagram towards `next_hop`.
    fn send(&self, next_hop: Ipv6Addr, datagram: &[u8]) -> Result<(), TransportError>;

    fn register(
        &self,
        filter: FilterSpec,
        consumer: Arc<dyn DatagramConsumer>,
    ) -> Result<Registration, TransportError>;

    fn unregister(&self, reg: Registration);

    /// Receives everything no filter claims.
    fn set_kernel_sink(&self, sink: Option<Arc<dyn DatagramConsumer>>);

    /// Runs `tick` every `interval`, first after one interval, until it
    /// breaks or the handle is cancelled.
    fn schedule(&self, interval: Duration, tick: Tick) -> TimerHandle;

    fn filter_stats(&self) -> FilterStats;
}

type Entry = (u64, FilterSpec, Arc<dyn DatagramConsumer>);

/// Filter registrations and partition counters shared by all backends.
#[derive(Default)]
pub struct FilterTable {
    entries: RwLock<Vec<Entry>>,
    kernel_sink: RwLock<Option<Arc<dyn DatagramConsumer>>>,
    next_id: AtomicU64,
    received: AtomicU64,
    matched: AtomicU64,
    unmatched: AtomicU64,
}

impl FilterTable {
    pub fn register(&self, filter: FilterSpec, consumer: Arc<dyn DatagramConsumer>) -> Registration {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.entries.write().unwrap().push((id, filter, consumer));
        Registration(id)
    }

    /// Removes a registration, returning its filter.
    pub fn unregister(&self, reg: Registration) -> Option<FilterSpec> {
        let mut entries = self.entries.write().unwrap();
        let pos = entries.iter().position(|(id, _, _)| *id == reg.0)?;
        Some(entries.remove(pos).1)
    }

    pub fn has_port(&self, port: u16) -> bool {
        self.entries
            .read()
            .unwrap()
            .iter()
            .any(|(_, f, _)| f.local_port == port)
    }

    pub fn set_kernel_sink(&self, sink: Option<Arc<dyn DatagramConsumer>>) {
        *self.kernel_sink.write().unwrap() = sink;
    }

    /// Routes one datagram to the first matching consumer or the kernel
    /// sink. Returns whether a filter matched.
    pub fn dispatch(&self, datagram: &[u8]) -> bool {
        self.received.fetch_add(1, Ordering::Relaxed);
        let consumer = DatagramView::parse(datagram).ok().and_then(|v| {
            self.entries
                .read()
                .unwrap()
                .iter()
                .find(|(_, f, _)| f.matches(v.dst_addr, v.dst_port))
                .map(|(_, _, c)| c.clone())
        });
        match consumer {
            Some(c) => {
                self.matched.fetch_add(1, Ordering::Relaxed);
                c.deliver(datagram);
                true
            }
            None => {
                self.unmatched.fetch_add(1, Ordering::Relaxed);
                let sink = self.kernel_sink.read().unwrap().clone();
                if let Some(s) = sink {
                    s.deliver(datagram);
                }
                false
            }
        }
    }

    pub fn stats(&self) -> FilterStats {
        FilterStats {
            received: self.received.load(Ordering::Relaxed),
            matched: self.matched.load(Ordering::Relaxed),
            unmatched: self.unmatched.load(Ordering::Relaxed),
        }
    }
}

/// Runs `tick` on a dedicated thread against the host clock.
pub(crate) fn spawn_host_timer(interval: Duration, mut tick: Tick) -> TimerHandle {
    let handle = TimerHandle::new();
    let h = handle.clone();
    std::thread::Builder::new()
        .name("stamp-timer".into())
        .spawn(move || {
            let start = std::time::Instant::now();
            let mut n: u32 = 1;
            loop {
                let deadline = start + interval * n;
                let now = std::time::Instant::now();
                if deadline > now {
                    std::thread::sleep(deadline - now);
                }
                if h.is_cancelled() || tick().is_break() {
                    break;
                }
                n = n.saturating_add(1);
            }
        })
        .expect("spawn timer thread");
    handle
}
