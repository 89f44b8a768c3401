//! Host UDP sockets, unprivileged.
//!
//! Only the UDP payload crosses the socket, so the SRH of outgoing
//! datagrams is dropped and the packet follows plain IPv6 routing to the
//! next hop. On receive, the hop limit and destination address are
//! recovered from ancillary data and the datagram is rebuilt as a full
//! IPv6/UDP packet before filtering.

use std::collections::HashMap;
use std::io;
use std::mem;
use std::net::{Ipv6Addr, SocketAddr, SocketAddrV6, UdpSocket};
use std::os::fd::AsRawFd;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{
    spawn_host_timer, DatagramConsumer, FilterSpec, FilterStats, FilterTable, Registration, Tick,
    TimerHandle, Transport, TransportError,
};
use crate::codec::{build_udp_datagram, DatagramView, Envelope, DEFAULT_HOP_LIMIT};
use crate::timebase::Clock;

const POLL: Duration = Duration::from_millis(100);

pub struct UdpTransport {
    clock: Clock,
    local_addr: Ipv6Addr,
    filters: Arc<FilterTable>,
    sockets: Mutex<HashMap<u16, Arc<UdpSocket>>>,
    listeners: Mutex<HashMap<u16, Arc<AtomicBool>>>,
    srh_warned: AtomicBool,
}

fn setsockopt_int(fd: i32, level: i32, name: i32, value: i32) -> io::Result<()> {
    // SAFETY: value outlives the call and the length matches its type.
    let rc = unsafe {
        libc::setsockopt(
            fd,
            level,
            name,
            &value as *const i32 as *const libc::c_void,
            mem::size_of::<i32>() as libc::socklen_t,
        )
    };
    if rc == 0 {
        Ok(())
    } else {
        Err(io::Error::last_os_error())
    }
}

struct Received {
    len: usize,
    peer: SocketAddrV6,
    hop_limit: Option<u8>,
    dst: Option<Ipv6Addr>,
}

fn recv_with_ancillary(sock: &UdpSocket, buf: &mut [u8]) -> io::Result<Received> {
    let fd = sock.as_raw_fd();
    // SAFETY: zeroed sockaddr_in6 / msghdr are valid initial states.
    let mut peer: libc::sockaddr_in6 = unsafe { mem::zeroed() };
    let mut iov = libc::iovec {
        iov_base: buf.as_mut_ptr() as *mut libc::c_void,
        iov_len: buf.len(),
    };
    let mut control = [0u64; 16];
    let mut msg: libc::msghdr = unsafe { mem::zeroed() };
    msg.msg_name = &mut peer as *mut _ as *mut libc::c_void;
    msg.msg_namelen = mem::size_of::<libc::sockaddr_in6>() as libc::socklen_t;
    msg.msg_iov = &mut iov;
    msg.msg_iovlen = 1;
    msg.msg_control = control.as_mut_ptr() as *mut libc::c_void;
    msg.msg_controllen = mem::size_of_val(&control) as _;
    // SAFETY: every pointer in msg references a live local buffer.
    let n = unsafe { libc::recvmsg(fd, &mut msg, 0) };
    if n < 0 {
        return Err(io::Error::last_os_error());
    }
    let mut hop_limit = None;
    let mut dst = None;
    // SAFETY: walking the control buffer the kernel just filled, using the
    // libc CMSG accessors.
    unsafe {
        let mut cmsg = libc::CMSG_FIRSTHDR(&msg);
        while !cmsg.is_null() {
            let c = &*cmsg;
            if c.cmsg_level == libc::IPPROTO_IPV6 && c.cmsg_type == libc::IPV6_HOPLIMIT {
                let v = std::ptr::read_unaligned(libc::CMSG_DATA(cmsg) as *const i32);
                hop_limit = u8::try_from(v).ok();
            } else if c.cmsg_level == libc::IPPROTO_IPV6 && c.cmsg_type == libc::IPV6_PKTINFO {
                let info =
                    std::ptr::read_unaligned(libc::CMSG_DATA(cmsg) as *const libc::in6_pktinfo);
                dst = Some(Ipv6Addr::from(info.ipi6_addr.s6_addr));
            }
            cmsg = libc::CMSG_NXTHDR(&msg, cmsg);
        }
    }
    let peer = SocketAddrV6::new(
        Ipv6Addr::from(peer.sin6_addr.s6_addr),
        u16::from_be(peer.sin6_port),
        peer.sin6_flowinfo,
        peer.sin6_scope_id,
    );
    Ok(Received {
        len: n as usize,
        peer,
        hop_limit,
        dst,
    })
}

impl UdpTransport {
    /// Sockets bind to `local_addr` (use `::` for any).
    pub fn new(clock: Clock, local_addr: Ipv6Addr) -> Arc<Self> {
        Arc::new(UdpTransport {
            clock,
            local_addr,
            filters: Arc::new(FilterTable::default()),
            sockets: Mutex::new(HashMap::new()),
            listeners: Mutex::new(HashMap::new()),
            srh_warned: AtomicBool::new(false),
        })
    }

    fn socket_for(&self, port: u16) -> io::Result<Arc<UdpSocket>> {
        let mut socks = self.sockets.lock().unwrap();
        if let Some(s) = socks.get(&port) {
            return Ok(s.clone());
        }
        let sock = UdpSocket::bind(SocketAddr::V6(SocketAddrV6::new(self.local_addr, port, 0, 0)))?;
        let fd = sock.as_raw_fd();
        setsockopt_int(fd, libc::IPPROTO_IPV6, libc::IPV6_RECVHOPLIMIT, 1)?;
        setsockopt_int(fd, libc::IPPROTO_IPV6, libc::IPV6_RECVPKTINFO, 1)?;
        sock.set_read_timeout(Some(POLL))?;
        let sock = Arc::new(sock);
        let bound = sock.local_addr()?.port();
        socks.insert(bound, sock.clone());
        if bound != port {
            socks.insert(port, sock.clone());
        }
        Ok(sock)
    }

    fn ensure_listener(&self, port: u16) -> io::Result<()> {
        let mut listeners = self.listeners.lock().unwrap();
        if listeners.get(&port).is_some_and(|f| f.load(Ordering::Acquire)) {
            return Ok(());
        }
        let sock = self.socket_for(port)?;
        let running = Arc::new(AtomicBool::new(true));
        listeners.insert(port, running.clone());
        let filters = self.filters.clone();
        let local = self.local_addr;
        std::thread::Builder::new()
            .name(format!("stamp-udp-{port}"))
            .spawn(move || {
                let mut buf = vec![0u8; 65_535];
                while running.load(Ordering::Acquire) {
                    let r = match recv_with_ancillary(&sock, &mut buf) {
                        Ok(r) => r,
                        Err(e)
                            if matches!(
                                e.kind(),
                                io::ErrorKind::WouldBlock
                                    | io::ErrorKind::TimedOut
                                    | io::ErrorKind::Interrupted
                            ) =>
                        {
                            continue
                        }
                        Err(e) => {
                            log::warn!("udp receive on port {port}: {e}");
                            continue;
                        }
                    };
                    let env = Envelope {
                        hop_limit: r.hop_limit.unwrap_or(DEFAULT_HOP_LIMIT),
                        src_port: r.peer.port(),
                        dst_port: port,
                        ..Envelope::new(*r.peer.ip(), r.dst.unwrap_or(local))
                    };
                    match build_udp_datagram(&env, &buf[..r.len]) {
                        Ok((bytes, _)) => {
                            filters.dispatch(&bytes);
                        }
                        Err(e) => log::warn!("dropping oversized datagram: {e}"),
                    }
                }
            })?;
        Ok(())
    }

    /// Port actually bound for `port` (differs when `port` is 0).
    pub fn bound_port(&self, port: u16) -> io::Result<u16> {
        Ok(self.socket_for(port)?.local_addr()?.port())
    }
}

impl Drop for UdpTransport {
    fn drop(&mut self) {
        for flag in self.listeners.lock().unwrap().values() {
            flag.store(false, Ordering::Release);
        }
    }
}

impl Transport for UdpTransport {
    fn clock(&self) -> Clock {
        self.clock.clone()
    }

    fn send(&self, next_hop: Ipv6Addr, datagram: &[u8]) -> Result<(), TransportError> {
        let view =
            DatagramView::parse(datagram).map_err(|e| TransportError::Malformed(e.to_string()))?;
        if view.srh_range.is_some() && !self.srh_warned.swap(true, Ordering::Relaxed) {
            log::warn!("plain UDP transport: SRH not transmitted, path follows IPv6 routing");
        }
        let sock = self.socket_for(view.src_port)?;
        setsockopt_int(
            sock.as_raw_fd(),
            libc::IPPROTO_IPV6,
            libc::IPV6_UNICAST_HOPS,
            i32::from(view.hop_limit),
        )?;
        sock.send_to(
            view.payload(),
            SocketAddr::V6(SocketAddrV6::new(next_hop, view.dst_port, 0, 0)),
        )?;
        Ok(())
    }

    fn register(
        &self,
        filter: FilterSpec,
        consumer: Arc<dyn DatagramConsumer>,
    ) -> Result<Registration, TransportError> {
        self.ensure_listener(filter.local_port)?;
        Ok(self.filters.register(filter, consumer))
    }

    fn unregister(&self, reg: Registration) {
        if let Some(f) = self.filters.unregister(reg) {
            if !self.filters.has_port(f.local_port) {
                if let Some(flag) = self.listeners.lock().unwrap().remove(&f.local_port) {
                    flag.store(false, Ordering::Release);
                }
            }
        }
    }

    fn set_kernel_sink(&self, sink: Option<Arc<dyn DatagramConsumer>>) {
        self.filters.set_kernel_sink(sink);
    }

    fn schedule(&self, interval: Duration, tick: Tick) -> TimerHandle {
        spawn_host_timer(interval, tick)
    }

    fn filter_stats(&self) -> FilterStats {
        self.filters.stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;

    #[test]
    fn loopback_round_trip_recovers_hop_limit() {
        let lo = Ipv6Addr::LOCALHOST;
        let rx = UdpTransport::new(Clock::host(), lo);
        let tx = UdpTransport::new(Clock::host(), lo);
        let port = rx.bound_port(0).unwrap();
        let (send, recv) = mpsc::channel::<Vec<u8>>();
        let send = Mutex::new(send);
        rx.register(
            FilterSpec::new(Some(lo), port),
            Arc::new(move |b: &[u8]| {
                let _ = send.lock().unwrap().send(b.to_vec());
            }),
        )
        .unwrap();
        let src_port = tx.bound_port(0).unwrap();
        let env = Envelope {
            hop_limit: 33,
            src_port,
            dst_port: port,
            ..Envelope::new(lo, lo)
        };
        let (bytes, _) = build_udp_datagram(&env, b"stamp").unwrap();
        tx.send(lo, &bytes).unwrap();
        let got = recv.recv_timeout(Duration::from_secs(5)).expect("datagram");
        let v = DatagramView::parse(&got).unwrap();
        assert_eq!(v.payload(), b"stamp");
        assert_eq!(v.hop_limit, 33);
        assert_eq!(v.src_port, src_port);
        assert_eq!(v.dst_addr, lo);
        assert!(v.checksum_valid());
        assert_eq!(rx.filter_stats().matched, 1);
    }
}
