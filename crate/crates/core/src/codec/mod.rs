//! Decoding of captured Ethernet frames into the BACnet/IP layer stack:
//! Ethernet, IPv4/UDP, BVLC, NPDU and the APDU type nibble.
//!
//! All functions here are pure and may be called from any thread.

mod address;
mod bvll;
mod frame;

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use address::{
    decode_bip_address, AddressKind, BacnetAddress, BacnetIpAddress, MacAddress,
    GLOBAL_BROADCAST_NET,
};
pub use bvll::{
    control, function, parse_apdu_type, parse_bvlc, parse_npdu, ApduSummary, BvlcHeader, Bvll,
    BvllBody, Npdu, NpduDestination, BVLC_HEADER_LEN, BVLC_TYPE_BIP,
};
pub use frame::FrameBuilder;

use crate::Timestamp;

/// Default BACnet/IP UDP port (0xBAC0).
pub const BACNET_IP_PORT: u16 = 47808;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88A8;
const IP_PROTO_UDP: u8 = 17;
const ETH_HEADER_LEN: usize = 14;
const UDP_HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Ethernet,
    Ip,
    Udp,
    Bvlc,
    Npdu,
    Apdu,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Layer::Ethernet => "Ethernet",
            Layer::Ip => "IP",
            Layer::Udp => "UDP",
            Layer::Bvlc => "BVLC",
            Layer::Npdu => "NPDU",
            Layer::Apdu => "APDU",
        };
        f.write_str(name)
    }
}

/// A length field contradicts the octets available. `offset` is relative to
/// the start of `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("malformed {layer} at offset {offset}")]
pub struct MalformedPacket {
    pub layer: Layer,
    pub offset: usize,
}

impl MalformedPacket {
    pub fn new(layer: Layer, offset: usize) -> Self {
        Self { layer, offset }
    }
}

/// One captured frame decomposed into the fields used for flow analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPacket {
    pub timestamp: Timestamp,
    pub src_mac: MacAddress,
    pub dst_mac: MacAddress,
    pub src_ip: BacnetIpAddress,
    pub dst_ip: BacnetIpAddress,
    /// Effective source endpoint: NPDU SADR when present, else IP:port.
    pub src_addr: BacnetAddress,
    /// Effective destination endpoint: NPDU DADR when present, broadcast for
    /// broadcast frames, else IP:port.
    pub dst_addr: BacnetAddress,
    pub bvlc: BvlcHeader,
    pub forwarded_from: Option<BacnetIpAddress>,
    pub npdu: Option<Npdu>,
    pub apdu: Option<ApduSummary>,
    /// Octet count of the BVLL.
    pub total_length: u16,
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Decode one Ethernet frame.
///
/// `Ok(None)` means the frame is not UDP carrying a BVLL.
pub fn parse_frame(
    frame: &[u8],
    timestamp: Timestamp,
) -> Result<Option<ParsedPacket>, MalformedPacket> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(MalformedPacket::new(Layer::Ethernet, frame.len()));
    }
    let dst_mac = MacAddress(frame[0..6].try_into().expect("6 octets"));
    let src_mac = MacAddress(frame[6..12].try_into().expect("6 octets"));
    let mut ethertype_at = 12;
    let mut ethertype = be16(frame, ethertype_at);
    while matches!(ethertype, ETHERTYPE_VLAN | ETHERTYPE_QINQ) {
        ethertype_at += 4;
        if frame.len() < ethertype_at + 2 {
            return Err(MalformedPacket::new(Layer::Ethernet, frame.len()));
        }
        ethertype = be16(frame, ethertype_at);
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Ok(None);
    }

    let ip = &frame[ethertype_at + 2..];
    if ip.len() < 20 {
        return Err(MalformedPacket::new(Layer::Ip, ip.len()));
    }
    if ip[0] >> 4 != 4 {
        return Ok(None);
    }
    let ihl = usize::from(ip[0] & 0x0F) * 4;
    if ihl < 20 || ihl > ip.len() {
        return Err(MalformedPacket::new(Layer::Ip, 0));
    }
    let total_len = usize::from(be16(ip, 2));
    if total_len < ihl || total_len > ip.len() {
        return Err(MalformedPacket::new(Layer::Ip, 2));
    }
    if ip[9] != IP_PROTO_UDP {
        return Ok(None);
    }
    let frag = be16(ip, 6);
    if frag & 0x3FFF != 0 {
        // Fragments are not reassembled.
        return Ok(None);
    }
    let src_ipv4 = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ipv4 = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let udp = &ip[ihl..total_len];
    if udp.len() < UDP_HEADER_LEN {
        return Err(MalformedPacket::new(Layer::Udp, udp.len()));
    }
    let udp_len = usize::from(be16(udp, 4));
    if udp_len < UDP_HEADER_LEN || udp_len > udp.len() {
        return Err(MalformedPacket::new(Layer::Udp, 4));
    }
    let src_ip = BacnetIpAddress::new(src_ipv4, be16(udp, 0));
    let dst_ip = BacnetIpAddress::new(dst_ipv4, be16(udp, 2));
    let payload = &udp[UDP_HEADER_LEN..udp_len];
    if payload.first() != Some(&BVLC_TYPE_BIP) {
        return Ok(None);
    }

    let bvll = Bvll::parse(payload)?;
    let (forwarded_from, npdu) = match bvll.body {
        BvllBody::Npdu {
            forwarded_from,
            npdu,
        } => (forwarded_from, Some(npdu)),
        BvllBody::Other(_) => (None, None),
    };
    let apdu = match &npdu {
        Some(n) if !n.is_network_message() => Some(parse_apdu_type(&n.payload)?),
        _ => None,
    };

    let src_addr = npdu
        .as_ref()
        .and_then(|n| n.source.clone())
        .unwrap_or_else(|| BacnetAddress::ip(src_ip));
    let broadcast_frame = dst_mac.is_broadcast()
        || dst_ipv4 == Ipv4Addr::BROADCAST
        || bvll.header.function == function::ORIGINAL_BROADCAST_NPDU;
    let dst_addr = match npdu.as_ref().and_then(|n| n.destination.as_ref()) {
        Some(dest) => dest.address.clone(),
        None if broadcast_frame => BacnetAddress::broadcast(),
        None => BacnetAddress::ip(dst_ip),
    };

    Ok(Some(ParsedPacket {
        timestamp,
        src_mac,
        dst_mac,
        src_ip,
        dst_ip,
        src_addr,
        dst_addr,
        bvlc: bvll.header,
        forwarded_from,
        npdu,
        apdu,
        total_length: bvll.header.length,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> Timestamp {
        Timestamp::from_parts(1_425_283_200, 0)
    }

    fn unicast(payload: &[u8]) -> Vec<u8> {
        FrameBuilder::new(
            BacnetIpAddress::new(Ipv4Addr::new(192, 168, 1, 10), BACNET_IP_PORT),
            BacnetIpAddress::new(Ipv4Addr::new(192, 168, 1, 20), BACNET_IP_PORT),
        )
        .build(payload)
    }

    #[test]
    fn original_unicast_npdu() {
        // 12-octet BVLL: header, NPDU 01 04, confirmed ReadProperty request.
        let bvll = [
            0x81, 0x0A, 0x00, 0x0C, 0x01, 0x04, 0x00, 0x05, 0x01, 0x0C, 0x0C, 0x00,
        ];
        let p = parse_frame(&unicast(&bvll), ts()).unwrap().unwrap();
        assert_eq!(p.bvlc.function, 0x0A);
        assert_eq!(p.bvlc.length, 12);
        assert_eq!(p.total_length, 12);
        assert_eq!(p.apdu.unwrap().pdu_type, 0x0);
        assert_eq!(p.src_addr.to_string(), "192.168.1.10:47808");
        assert_eq!(p.dst_addr.to_string(), "192.168.1.20:47808");
    }

    #[test]
    fn tcp_is_not_bacnet() {
        let mut frame = unicast(&[0x81, 0x0A, 0x00, 0x04]);
        frame[14 + 9] = 6;
        assert_eq!(parse_frame(&frame, ts()).unwrap(), None);
    }

    #[test]
    fn non_bvll_udp_is_not_bacnet() {
        assert_eq!(parse_frame(&unicast(&[0x45, 0, 0, 4]), ts()).unwrap(), None);
        assert_eq!(parse_frame(&unicast(&[]), ts()).unwrap(), None);
    }

    #[test]
    fn arp_is_not_bacnet() {
        let mut frame = unicast(&[0x81, 0x0A, 0x00, 0x04]);
        frame[12] = 0x08;
        frame[13] = 0x06;
        assert_eq!(parse_frame(&frame, ts()).unwrap(), None);
    }

    #[test]
    fn declared_bvlc_length_exceeds_data() {
        let mut payload = vec![0x81, 0x0A, 0x00, 0x20];
        payload.resize(16, 0);
        let err = parse_frame(&unicast(&payload), ts()).unwrap_err();
        assert_eq!(err, MalformedPacket::new(Layer::Bvlc, 3));
    }

    #[test]
    fn management_function_has_no_npdu() {
        let p = parse_frame(&unicast(&[0x81, 0x05, 0x00, 0x06, 0x00, 0x3C]), ts())
            .unwrap()
            .unwrap();
        assert!(p.npdu.is_none());
        assert!(p.apdu.is_none());
    }

    #[test]
    fn network_message_has_no_apdu() {
        let p = parse_frame(&unicast(&[0x81, 0x0B, 0x00, 0x07, 0x01, 0x80, 0x01]), ts())
            .unwrap()
            .unwrap();
        assert_eq!(p.npdu.as_ref().unwrap().message_type, Some(0x01));
        assert!(p.apdu.is_none());
        assert!(p.dst_addr.is_broadcast());
    }

    #[test]
    fn npdu_addresses_override_ip_endpoints() {
        let bvll = [
            0x81, 0x0A, 0x00, 0x12, 0x01, 0x28, 0x00, 0x01, 0x06, 0xC0, 0xA8, 0x01, 0x05, 0xBA,
            0xC0, 0x00, 0x02, 0x01, 0x05, 0xFF, 0x10, 0x08,
        ];
        let mut bvll = bvll.to_vec();
        bvll[3] = bvll.len() as u8;
        let p = parse_frame(&unicast(&bvll), ts()).unwrap().unwrap();
        assert_eq!(p.src_addr.to_string(), "2/0x05");
        assert_eq!(p.dst_addr.to_string(), "1/192.168.1.5:47808");
        assert_eq!(p.apdu.unwrap().pdu_type, 0x1);
    }

    #[test]
    fn vlan_tag_is_skipped() {
        let plain = unicast(&[0x81, 0x0A, 0x00, 0x07, 0x01, 0x00, 0x30]);
        let mut tagged = plain[..12].to_vec();
        tagged.extend_from_slice(&[0x81, 0x00, 0x00, 0x64]);
        tagged.extend_from_slice(&plain[12..]);
        let a = parse_frame(&plain, ts()).unwrap().unwrap();
        let b = parse_frame(&tagged, ts()).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ethernet_padding_is_ignored() {
        let mut frame = unicast(&[0x81, 0x0A, 0x00, 0x07, 0x01, 0x00, 0x30]);
        frame.resize(frame.len() + 12, 0);
        let p = parse_frame(&frame, ts()).unwrap().unwrap();
        assert_eq!(p.total_length, 7);
    }

    #[test]
    fn short_frames_are_malformed() {
        assert_eq!(
            parse_frame(&[0u8; 10], ts()).unwrap_err(),
            MalformedPacket::new(Layer::Ethernet, 10)
        );
        let frame = unicast(&[0x81, 0x0A, 0x00, 0x07, 0x01, 0x00, 0x30]);
        assert_eq!(
            parse_frame(&frame[..30], ts()).unwrap_err().layer,
            Layer::Ip
        );
    }
}
