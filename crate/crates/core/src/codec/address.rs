use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{Layer, MalformedPacket};

/// Global broadcast network number (DNET = 0xFFFF).
pub const GLOBAL_BROADCAST_NET: u16 = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress([0xFF; 6]);

    pub fn is_broadcast(&self) -> bool {
        self.0 == [0xFF; 6]
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

/// Annex J B/IP address: IPv4 address followed by a big-endian UDP port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BacnetIpAddress {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl BacnetIpAddress {
    pub const WIRE_LEN: usize = 6;

    pub fn new(ip: Ipv4Addr, port: u16) -> Self {
        Self { ip, port }
    }

    pub fn encode(&self) -> [u8; 6] {
        let o = self.ip.octets();
        let p = self.port.to_be_bytes();
        [o[0], o[1], o[2], o[3], p[0], p[1]]
    }
}

impl fmt::Display for BacnetIpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Decode a 6-octet B/IP address.
pub fn decode_bip_address(octets: &[u8]) -> Result<BacnetIpAddress, MalformedPacket> {
    let wire: [u8; 6] = octets.try_into().map_err(|_| {
        MalformedPacket::new(Layer::Npdu, octets.len().min(BacnetIpAddress::WIRE_LEN))
    })?;
    Ok(BacnetIpAddress {
        ip: Ipv4Addr::new(wire[0], wire[1], wire[2], wire[3]),
        port: u16::from_be_bytes([wire[4], wire[5]]),
    })
}

/// MAC-layer portion of a BACnet address, selected by its wire length.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AddressKind {
    /// Zero-length DADR: broadcast on the destination network.
    Broadcast,
    Ip(BacnetIpAddress),
    MsTp(u8),
    /// Any other length; kept verbatim so it re-encodes unchanged.
    Raw(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BacnetAddress {
    pub network: Option<u16>,
    pub kind: AddressKind,
}

impl BacnetAddress {
    pub fn ip(addr: BacnetIpAddress) -> Self {
        Self {
            network: None,
            kind: AddressKind::Ip(addr),
        }
    }

    pub fn broadcast() -> Self {
        Self {
            network: None,
            kind: AddressKind::Broadcast,
        }
    }

    pub fn ms_tp(mac: u8, network: Option<u16>) -> Self {
        Self {
            network,
            kind: AddressKind::MsTp(mac),
        }
    }

    /// Classify a DADR/SADR by its length.
    pub fn from_mac(network: Option<u16>, mac: &[u8]) -> Self {
        let kind = match mac.len() {
            1 => AddressKind::MsTp(mac[0]),
            6 => AddressKind::Ip(decode_bip_address(mac).expect("length checked")),
            _ => AddressKind::Raw(mac.to_vec()),
        };
        Self { network, kind }
    }

    /// Address used for a zero-length DADR.
    pub fn network_broadcast(network: u16) -> Self {
        let network = (network != GLOBAL_BROADCAST_NET).then_some(network);
        Self {
            network,
            kind: AddressKind::Broadcast,
        }
    }

    pub fn is_broadcast(&self) -> bool {
        matches!(self.kind, AddressKind::Broadcast)
    }

    /// MAC octets as they appear in DADR/SADR.
    pub fn mac_octets(&self) -> Vec<u8> {
        match &self.kind {
            AddressKind::Broadcast => Vec::new(),
            AddressKind::Ip(ip) => ip.encode().to_vec(),
            AddressKind::MsTp(m) => vec![*m],
            AddressKind::Raw(raw) => raw.clone(),
        }
    }
}

impl fmt::Display for BacnetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(net) = self.network {
            write!(f, "{net}/")?;
        }
        match &self.kind {
            AddressKind::Broadcast => f.write_str("broadcast"),
            AddressKind::Ip(ip) => write!(f, "{ip}"),
            AddressKind::MsTp(m) => write!(f, "0x{m:02x}"),
            AddressKind::Raw(raw) => {
                f.write_str("raw:")?;
                raw.iter().try_for_each(|b| write!(f, "{b:02x}"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_standard_port() {
        let a = decode_bip_address(&[0xC0, 0xA8, 0x01, 0x05, 0xBA, 0xC0]).unwrap();
        assert_eq!(a.to_string(), "192.168.1.5:47808");
    }

    #[test]
    fn decodes_adjacent_port() {
        let a = decode_bip_address(&[0x0A, 0x00, 0x00, 0x01, 0xBA, 0xC1]).unwrap();
        assert_eq!(a.to_string(), "10.0.0.1:47809");
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(decode_bip_address(&[1, 2, 3, 4, 5]).is_err());
        assert!(decode_bip_address(&[1, 2, 3, 4, 5, 6, 7]).is_err());
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(MacAddress::BROADCAST.to_string(), "ff:ff:ff:ff:ff:ff");
        assert!(MacAddress::BROADCAST.is_broadcast());
        assert_eq!(BacnetAddress::ms_tp(5, None).to_string(), "0x05");
        assert_eq!(BacnetAddress::ms_tp(5, Some(2)).to_string(), "2/0x05");
        assert_eq!(
            BacnetAddress::network_broadcast(0xFFFF).to_string(),
            "broadcast"
        );
        assert_eq!(
            BacnetAddress::network_broadcast(7).to_string(),
            "7/broadcast"
        );
        assert_eq!(
            BacnetAddress::from_mac(None, &[1, 2]).to_string(),
            "raw:0102"
        );
    }

    #[test]
    fn mac_length_selects_variant() {
        assert!(matches!(
            BacnetAddress::from_mac(None, &[9]).kind,
            AddressKind::MsTp(9)
        ));
        assert!(matches!(
            BacnetAddress::from_mac(None, &[0; 6]).kind,
            AddressKind::Ip(_)
        ));
        let raw = BacnetAddress::from_mac(None, &[1, 2, 3]);
        assert_eq!(raw.mac_octets(), vec![1, 2, 3]);
    }

    proptest! {
        #[test]
        fn bip_decode_inverts_encode(wire in any::<[u8; 6]>()) {
            let addr = decode_bip_address(&wire).unwrap();
            prop_assert_eq!(addr.encode(), wire);
        }
    }
}
