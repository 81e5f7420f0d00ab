use super::{BacnetIpAddress, MacAddress, ETHERTYPE_IPV4, IP_PROTO_UDP};

/// Builds Ethernet/IPv4/UDP frames around a UDP payload.
#[derive(Debug, Clone)]
pub struct FrameBuilder {
    pub src: BacnetIpAddress,
    pub dst: BacnetIpAddress,
    pub src_mac: MacAddress,
    pub dst_mac: MacAddress,
}

impl FrameBuilder {
    /// MAC addresses default to locally administered values derived from the IPs.
    pub fn new(src: BacnetIpAddress, dst: BacnetIpAddress) -> Self {
        Self {
            src,
            dst,
            src_mac: mac_for(src),
            dst_mac: mac_for(dst),
        }
    }

    pub fn with_macs(mut self, src_mac: MacAddress, dst_mac: MacAddress) -> Self {
        self.src_mac = src_mac;
        self.dst_mac = dst_mac;
        self
    }

    pub fn build(&self, payload: &[u8]) -> Vec<u8> {
        let udp_len = 8 + payload.len();
        let ip_len = 20 + udp_len;
        let mut f = Vec::with_capacity(14 + ip_len);
        f.extend_from_slice(&self.dst_mac.0);
        f.extend_from_slice(&self.src_mac.0);
        f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

        let ip_start = f.len();
        f.extend_from_slice(&[0x45, 0x00]);
        f.extend_from_slice(&(ip_len as u16).to_be_bytes());
        f.extend_from_slice(&[0x00, 0x00, 0x40, 0x00, 64, IP_PROTO_UDP, 0x00, 0x00]);
        f.extend_from_slice(&self.src.ip.octets());
        f.extend_from_slice(&self.dst.ip.octets());
        let csum = ipv4_checksum(&f[ip_start..ip_start + 20]);
        f[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

        f.extend_from_slice(&self.src.port.to_be_bytes());
        f.extend_from_slice(&self.dst.port.to_be_bytes());
        f.extend_from_slice(&(udp_len as u16).to_be_bytes());
        f.extend_from_slice(&[0x00, 0x00]);
        f.extend_from_slice(payload);
        f
    }
}

fn mac_for(addr: BacnetIpAddress) -> MacAddress {
    if addr.ip.is_broadcast() {
        return MacAddress::BROADCAST;
    }
    let o = addr.ip.octets();
    MacAddress([0x02, 0x00, o[0], o[1], o[2], o[3]])
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .sum();
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}
