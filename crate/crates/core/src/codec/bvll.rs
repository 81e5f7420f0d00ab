//! BVLL envelope, NPDU and APDU-type decoding with exact re-encoding.

use serde::{Deserialize, Serialize};

use super::address::{decode_bip_address, BacnetAddress, BacnetIpAddress, GLOBAL_BROADCAST_NET};
use super::{Layer, MalformedPacket};

/// BVLC type octet for BACnet/IP.
pub const BVLC_TYPE_BIP: u8 = 0x81;
pub const BVLC_HEADER_LEN: usize = 4;

pub mod function {
    pub const RESULT: u8 = 0x00;
    pub const WRITE_BDT: u8 = 0x01;
    pub const READ_BDT: u8 = 0x02;
    pub const READ_BDT_ACK: u8 = 0x03;
    pub const FORWARDED_NPDU: u8 = 0x04;
    pub const REGISTER_FOREIGN_DEVICE: u8 = 0x05;
    pub const READ_FDT: u8 = 0x06;
    pub const READ_FDT_ACK: u8 = 0x07;
    pub const DELETE_FDT_ENTRY: u8 = 0x08;
    pub const DISTRIBUTE_BROADCAST_TO_NETWORK: u8 = 0x09;
    pub const ORIGINAL_UNICAST_NPDU: u8 = 0x0A;
    pub const ORIGINAL_BROADCAST_NPDU: u8 = 0x0B;

    /// Functions whose payload carries an NPDU.
    pub fn carries_npdu(function: u8) -> bool {
        matches!(
            function,
            FORWARDED_NPDU | ORIGINAL_UNICAST_NPDU | ORIGINAL_BROADCAST_NPDU
        )
    }
}

/// NPCI control octet bits.
pub mod control {
    pub const NETWORK_MESSAGE: u8 = 0x80;
    pub const DESTINATION_PRESENT: u8 = 0x20;
    pub const SOURCE_PRESENT: u8 = 0x08;
    pub const EXPECTING_REPLY: u8 = 0x04;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BvlcHeader {
    pub bvlc_type: u8,
    pub function: u8,
    /// Total BVLL length including these four octets.
    pub length: u16,
}

impl BvlcHeader {
    pub fn encode(&self) -> [u8; 4] {
        let l = self.length.to_be_bytes();
        [self.bvlc_type, self.function, l[0], l[1]]
    }
}

/// Split a BVLL into its header and the `length - 4` octets that follow it.
///
/// Octets past the declared length are ignored.
pub fn parse_bvlc(payload: &[u8]) -> Result<(BvlcHeader, &[u8]), MalformedPacket> {
    if payload.len() < BVLC_HEADER_LEN {
        return Err(MalformedPacket::new(Layer::Bvlc, payload.len()));
    }
    let header = BvlcHeader {
        bvlc_type: payload[0],
        function: payload[1],
        length: u16::from_be_bytes([payload[2], payload[3]]),
    };
    let length = usize::from(header.length);
    if length < BVLC_HEADER_LEN || length > payload.len() {
        return Err(MalformedPacket::new(Layer::Bvlc, 3));
    }
    Ok((header, &payload[BVLC_HEADER_LEN..length]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpduDestination {
    pub address: BacnetAddress,
    pub hop_count: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Npdu {
    pub version: u8,
    pub control: u8,
    pub destination: Option<NpduDestination>,
    pub source: Option<BacnetAddress>,
    pub message_type: Option<u8>,
    /// APDU octets, or the network message body after the type octet.
    pub payload: Vec<u8>,
}

impl Npdu {
    pub fn is_network_message(&self) -> bool {
        self.control & control::NETWORK_MESSAGE != 0
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.version);
        out.push(self.control);
        if let Some(dest) = &self.destination {
            push_address(out, &dest.address);
        }
        if let Some(src) = &self.source {
            push_address(out, src);
        }
        if let Some(dest) = &self.destination {
            out.push(dest.hop_count);
        }
        if let Some(t) = self.message_type {
            out.push(t);
        }
        out.extend_from_slice(&self.payload);
    }
}

fn push_address(out: &mut Vec<u8>, addr: &BacnetAddress) {
    let mac = addr.mac_octets();
    out.extend_from_slice(&addr.network.unwrap_or(GLOBAL_BROADCAST_NET).to_be_bytes());
    out.push(mac.len() as u8);
    out.extend_from_slice(&mac);
}

struct Cursor<'a> {
    octets: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, err_at: usize) -> Result<&'a [u8], MalformedPacket> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.octets.len());
        match end {
            Some(end) => {
                let s = &self.octets[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(MalformedPacket::new(Layer::Npdu, err_at)),
        }
    }

    fn u8(&mut self) -> Result<u8, MalformedPacket> {
        let at = self.pos;
        Ok(self.take(1, at)?[0])
    }

    fn address(&mut self, dest: bool) -> Result<BacnetAddress, MalformedPacket> {
        let at = self.pos;
        let net = self.take(2, at)?;
        let net = u16::from_be_bytes([net[0], net[1]]);
        let len_at = self.pos;
        let len = usize::from(self.u8()?);
        let mac = self.take(len, len_at)?;
        Ok(if dest && len == 0 {
            BacnetAddress::network_broadcast(net)
        } else {
            BacnetAddress::from_mac(Some(net), mac)
        })
    }
}

pub fn parse_npdu(octets: &[u8]) -> Result<Npdu, MalformedPacket> {
    let mut cur = Cursor { octets, pos: 0 };
    let version = cur.u8()?;
    let control = cur.u8()?;
    let dest_addr = if control & control::DESTINATION_PRESENT != 0 {
        Some(cur.address(true)?)
    } else {
        None
    };
    let source = if control & control::SOURCE_PRESENT != 0 {
        Some(cur.address(false)?)
    } else {
        None
    };
    let destination = match dest_addr {
        Some(address) => Some(NpduDestination {
            address,
            hop_count: cur.u8()?,
        }),
        None => None,
    };
    let message_type = if control & control::NETWORK_MESSAGE != 0 {
        Some(cur.u8()?)
    } else {
        None
    };
    Ok(Npdu {
        version,
        control,
        destination,
        source,
        message_type,
        payload: octets[cur.pos..].to_vec(),
    })
}

/// PDU type nibble of an APDU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApduSummary {
    pub pdu_type: u8,
}

impl ApduSummary {
    pub fn name(&self) -> &'static str {
        match self.pdu_type {
            0x0 => "Confirmed-Request",
            0x1 => "Unconfirmed-Request",
            0x2 => "SimpleACK",
            0x3 => "ComplexACK",
            0x4 => "SegmentACK",
            0x5 => "Error",
            0x6 => "Reject",
            0x7 => "Abort",
            _ => "Reserved",
        }
    }
}

pub fn parse_apdu_type(octets: &[u8]) -> Result<ApduSummary, MalformedPacket> {
    match octets.first() {
        Some(first) => Ok(ApduSummary {
            pdu_type: first >> 4,
        }),
        None => Err(MalformedPacket::new(Layer::Apdu, 0)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BvllBody {
    Npdu {
        /// Originating device of a Forwarded-NPDU.
        forwarded_from: Option<BacnetIpAddress>,
        npdu: Npdu,
    },
    /// Management functions; body kept opaque.
    Other(Vec<u8>),
}

/// A fully decoded BVLL envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bvll {
    pub header: BvlcHeader,
    pub body: BvllBody,
}

impl Bvll {
    /// Parse the BVLL at the start of `payload`, reading no further than its declared length.
    pub fn parse(payload: &[u8]) -> Result<Self, MalformedPacket> {
        let (header, rest) = parse_bvlc(payload)?;
        let body = if function::carries_npdu(header.function) {
            let (forwarded_from, npdu_octets) = if header.function == function::FORWARDED_NPDU {
                if rest.len() < BacnetIpAddress::WIRE_LEN {
                    return Err(MalformedPacket::new(
                        Layer::Bvlc,
                        BVLC_HEADER_LEN + rest.len(),
                    ));
                }
                let (origin, npdu) = rest.split_at(BacnetIpAddress::WIRE_LEN);
                (Some(decode_bip_address(origin)?), npdu)
            } else {
                (None, rest)
            };
            BvllBody::Npdu {
                forwarded_from,
                npdu: parse_npdu(npdu_octets)?,
            }
        } else {
            BvllBody::Other(rest.to_vec())
        };
        Ok(Self { header, body })
    }

    pub fn npdu(&self) -> Option<&Npdu> {
        match &self.body {
            BvllBody::Npdu { npdu, .. } => Some(npdu),
            BvllBody::Other(_) => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(usize::from(self.header.length));
        out.extend_from_slice(&self.header.encode());
        match &self.body {
            BvllBody::Npdu {
                forwarded_from,
                npdu,
            } => {
                if let Some(origin) = forwarded_from {
                    out.extend_from_slice(&origin.encode());
                }
                npdu.encode_into(&mut out);
            }
            BvllBody::Other(raw) => out.extend_from_slice(raw),
        }
        out
    }

    /// Encode with the header length recomputed from the body.
    pub fn encode_fixing_length(&mut self) -> Vec<u8> {
        let mut out = self.encode();
        let len = out.len() as u16;
        self.header.length = len;
        out[2..4].copy_from_slice(&len.to_be_bytes());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::address::AddressKind;

    #[test]
    fn broadcast_header_only() {
        let (h, rest) = parse_bvlc(&[0x81, 0x0B, 0x00, 0x04]).unwrap();
        assert_eq!(h.function, function::ORIGINAL_BROADCAST_NPDU);
        assert_eq!(h.length, 4);
        assert!(rest.is_empty());
    }

    #[test]
    fn forwarded_remainder() {
        let mut p = vec![0x81, 0x04, 0x00, 0x0E];
        p.extend(1..=10u8);
        let (h, rest) = parse_bvlc(&p).unwrap();
        assert_eq!(h.function, function::FORWARDED_NPDU);
        assert_eq!(rest.len(), 10);
    }

    #[test]
    fn length_below_header_is_malformed() {
        let err = parse_bvlc(&[0x81, 0x0A, 0x00, 0x02]).unwrap_err();
        assert_eq!(err, MalformedPacket::new(Layer::Bvlc, 3));
    }

    #[test]
    fn length_past_data_is_malformed() {
        let mut p = vec![0x81, 0x0A, 0x00, 0x20];
        p.resize(16, 0);
        assert_eq!(
            parse_bvlc(&p).unwrap_err(),
            MalformedPacket::new(Layer::Bvlc, 3)
        );
    }

    #[test]
    fn trailing_octets_not_read() {
        let (_, rest) = parse_bvlc(&[0x81, 0x0A, 0x00, 0x06, 0x01, 0x00, 0xEE, 0xEE]).unwrap();
        assert_eq!(rest, &[0x01, 0x00]);
    }

    #[test]
    fn npdu_without_options() {
        let n = parse_npdu(&[0x01, 0x00, 0x10, 0x08]).unwrap();
        assert_eq!(n.control, 0x00);
        assert!(n.destination.is_none() && n.source.is_none() && n.message_type.is_none());
        assert_eq!(n.payload, vec![0x10, 0x08]);
    }

    #[test]
    fn npdu_network_message() {
        let n = parse_npdu(&[0x01, 0x80, 0x01]).unwrap();
        assert!(n.is_network_message());
        assert_eq!(n.message_type, Some(0x01));
        assert!(n.payload.is_empty());
    }

    // Layout per the NPCI definition: DNET(2) DLEN(1) DADR, SNET(2) SLEN(1) SADR, hop count.
    #[test]
    fn npdu_routed_addresses() {
        let octets = [
            0x01, 0x28, // version, control: DNET + SNET present
            0x00, 0x01, 0x06, 0xC0, 0xA8, 0x01, 0x05, 0xBA, 0xC0, // DNET 1, DLEN 6, DADR
            0x00, 0x02, 0x01, 0x05, // SNET 2, SLEN 1, SADR
            0xFF, // hop count
            0x00, 0x05, // APDU
        ];
        let n = parse_npdu(&octets).unwrap();
        let dest = n.destination.as_ref().unwrap();
        assert_eq!(dest.hop_count, 0xFF);
        assert_eq!(dest.address.network, Some(1));
        assert_eq!(dest.address.to_string(), "1/192.168.1.5:47808");
        let src = n.source.as_ref().unwrap();
        assert_eq!(src.kind, AddressKind::MsTp(0x05));
        assert_eq!(src.network, Some(2));
        assert_eq!(n.payload, vec![0x00, 0x05]);

        let mut again = Vec::new();
        n.encode_into(&mut again);
        assert_eq!(again, octets);
    }

    #[test]
    fn npdu_dlen_overrun() {
        // DLEN claims 6 octets, only 2 remain.
        let err = parse_npdu(&[0x01, 0x20, 0x00, 0x01, 0x06, 0xAA, 0xBB]).unwrap_err();
        assert_eq!(err, MalformedPacket::new(Layer::Npdu, 4));
    }

    #[test]
    fn npdu_zero_dlen_is_broadcast() {
        let n = parse_npdu(&[0x01, 0x20, 0xFF, 0xFF, 0x00, 0xFF, 0x10, 0x08]).unwrap();
        let dest = n.destination.unwrap();
        assert!(dest.address.is_broadcast());
        assert_eq!(dest.address.network, None);
    }

    #[test]
    fn apdu_type_nibble() {
        assert_eq!(parse_apdu_type(&[0x00]).unwrap().pdu_type, 0x0);
        assert_eq!(parse_apdu_type(&[0x30, 0x01]).unwrap().pdu_type, 0x3);
        assert_eq!(parse_apdu_type(&[0x1F]).unwrap().pdu_type, 0x1);
        assert_eq!(parse_apdu_type(&[0x30]).unwrap().name(), "ComplexACK");
        assert!(parse_apdu_type(&[]).is_err());
    }

    #[test]
    fn forwarded_npdu_exposes_origin() {
        let bytes = [
            0x81, 0x04, 0x00, 0x0E, 0x0A, 0x00, 0x00, 0x09, 0xBA, 0xC0, 0x01, 0x00, 0x10, 0x08,
        ];
        let bvll = Bvll::parse(&bytes).unwrap();
        match &bvll.body {
            BvllBody::Npdu { forwarded_from, .. } => {
                assert_eq!(forwarded_from.unwrap().to_string(), "10.0.0.9:47808")
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(bvll.encode(), bytes);
    }

    #[test]
    fn management_function_body_is_opaque() {
        let bytes = [0x81, 0x05, 0x00, 0x06, 0x00, 0x3C];
        let bvll = Bvll::parse(&bytes).unwrap();
        assert!(bvll.npdu().is_none());
        assert_eq!(bvll.encode(), bytes);
    }
}
