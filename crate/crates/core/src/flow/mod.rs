//! Grouping packets into typed flows and classifying their timing.

mod classify;
mod stats;
mod table;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use classify::{
    classify, classify_timing, ClassifyConfig, ConfigError, FlowClass, InsufficientData, Pattern,
};
pub use stats::{FlowStats, Moments};
pub use table::{FlowBuilder, FlowEntry, FlowTable, DEFAULT_REORDER_WINDOW_SECS};

use crate::codec::ParsedPacket;
use crate::BacnetAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowLayer {
    /// NPDU carries a network layer message; type code is the message type.
    Network,
    /// NPDU carries an APDU; type code is the PDU type nibble.
    Application,
}

impl fmt::Display for FlowLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowLayer::Network => "network",
            FlowLayer::Application => "application",
        })
    }
}

/// Directed connection plus message class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: BacnetAddress,
    pub dst: BacnetAddress,
    pub layer: FlowLayer,
    pub type_code: u8,
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> {} {} 0x{:02x}",
            self.src, self.dst, self.layer, self.type_code
        )
    }
}

/// Flow key of a packet, or `None` when the packet has no NPDU (untypable).
pub fn flow_key(packet: &ParsedPacket) -> Option<FlowKey> {
    let npdu = packet.npdu.as_ref()?;
    let (layer, type_code) = if npdu.is_network_message() {
        (FlowLayer::Network, npdu.message_type?)
    } else {
        (FlowLayer::Application, packet.apdu?.pdu_type)
    };
    Some(FlowKey {
        src: packet.src_addr.clone(),
        dst: packet.dst_addr.clone(),
        layer,
        type_code,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{parse_frame, BacnetIpAddress, FrameBuilder};
    use crate::Timestamp;
    use std::net::Ipv4Addr;

    fn packet(src: [u8; 4], dst: [u8; 4], bvll: &[u8]) -> ParsedPacket {
        let frame = FrameBuilder::new(
            BacnetIpAddress::new(Ipv4Addr::from(src), 47808),
            BacnetIpAddress::new(Ipv4Addr::from(dst), 47808),
        )
        .build(bvll);
        parse_frame(&frame, Timestamp::default()).unwrap().unwrap()
    }

    #[test]
    fn application_key() {
        let p = packet(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            &[0x81, 0x0A, 0x00, 0x08, 0x01, 0x04, 0x00, 0x05],
        );
        let k = flow_key(&p).unwrap();
        assert_eq!(k.layer, FlowLayer::Application);
        assert_eq!(k.type_code, 0x00);
        assert_eq!(
            k.to_string(),
            "10.0.0.1:47808 -> 10.0.0.2:47808 application 0x00"
        );
    }

    #[test]
    fn network_key_to_broadcast() {
        let p = packet(
            [10, 0, 0, 1],
            [255, 255, 255, 255],
            &[0x81, 0x0B, 0x00, 0x09, 0x01, 0x80, 0x01, 0x00, 0x05],
        );
        let k = flow_key(&p).unwrap();
        assert_eq!(k.layer, FlowLayer::Network);
        assert_eq!(k.type_code, 0x01);
        assert!(k.dst.is_broadcast());
    }

    #[test]
    fn bvlc_only_packet_is_untypable() {
        let p = packet(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            &[0x81, 0x05, 0x00, 0x06, 0x00, 0x3C],
        );
        assert_eq!(flow_key(&p), None);
    }
}
