//! Internet checksum helpers (RFC 1071) with the IPv6 pseudo-header.

use std::net::Ipv6Addr;

/// Adds `data` as big-endian 16-bit words to an unfolded running sum.
/// An odd trailing byte is padded with zero.
pub fn sum_words(data: &[u8], mut acc: u64) -> u64 {
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        acc += u64::from(u16::from_be_bytes([c[0], c[1]]));
    }
    if let [last] = chunks.remainder() {
        acc += u64::from(*last) << 8;
    }
    acc
}

pub fn fold(mut acc: u64) -> u16 {
    while acc > 0xffff {
        acc = (acc & 0xffff) + (acc >> 16);
    }
    acc as u16
}

/// Unfolded sum of the IPv6 pseudo-header for an upper-layer packet.
pub fn pseudo_header_sum(src: &Ipv6Addr, dst: &Ipv6Addr, upper_len: u32, next_header: u8) -> u64 {
    let mut acc = sum_words(&src.octets(), 0);
    acc = sum_words(&dst.octets(), acc);
    acc += u64::from(upper_len >> 16) + u64::from(upper_len & 0xffff);
    acc + u64::from(next_header)
}

/// Final UDP checksum from an unfolded sum; zero is transmitted as 0xffff.
pub fn finish_udp(acc: u64) -> u16 {
    match !fold(acc) {
        0 => 0xffff,
        c => c,
    }
}

/// UDP checksum of `segment` (header + payload). The checksum field inside
/// `segment` must be zero.
pub fn udp_checksum(src: &Ipv6Addr, dst: &Ipv6Addr, segment: &[u8]) -> u16 {
    let acc = pseudo_header_sum(src, dst, segment.len() as u32, super::IPPROTO_UDP);
    finish_udp(sum_words(segment, acc))
}

/// True when a segment with its checksum in place sums to all ones.
pub fn udp_checksum_valid(src: &Ipv6Addr, dst: &Ipv6Addr, segment: &[u8]) -> bool {
    if segment.len() < 8 || segment[6..8] == [0, 0] {
        // A zero UDP checksum is not permitted over IPv6.
        return false;
    }
    let acc = pseudo_header_sum(src, dst, segment.len() as u32, super::IPPROTO_UDP);
    fold(sum_words(segment, acc)) == 0xffff
}
