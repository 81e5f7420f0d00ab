//! Classic libpcap file format, both byte orders, microsecond and nanosecond
//! timestamp variants.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::CaptureError;
use crate::Timestamp;

const MAGIC_MICROS: u32 = 0xA1B2_C3D4;
const MAGIC_NANOS: u32 = 0xA1B2_3C4D;
const PCAPNG_SHB: u32 = 0x0A0D_0D0A;
pub const LINKTYPE_ETHERNET: u32 = 1;
const FILE_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
// Anything larger than this is treated as a corrupt length field.
const MAX_RECORD_LEN: u32 = 256 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub timestamp: Timestamp,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            ByteOrder::Little => u32::from_le_bytes(a),
            ByteOrder::Big => u32::from_be_bytes(a),
        }
    }
}

/// Streaming reader yielding records in file order.
///
/// After a partial trailing record the iterator yields one
/// [`CaptureError::TruncatedFile`] and then ends.
pub struct PcapReader<R> {
    inner: R,
    order: ByteOrder,
    nanos: bool,
    link_type: u32,
    records: usize,
    out_of_order: usize,
    last_ts: Option<Timestamp>,
    finished: bool,
}

/// Open a pcap file for streaming.
pub fn read_pcap(path: impl AsRef<Path>) -> Result<PcapReader<BufReader<File>>, CaptureError> {
    let file = File::open(path)?;
    PcapReader::new(BufReader::new(file))
}

/// Read `buf.len()` octets or as many as exist before EOF.
fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, CaptureError> {
        let mut header = [0u8; FILE_HEADER_LEN];
        let got = read_up_to(&mut inner, &mut header)?;
        if got < 4 {
            return Err(CaptureError::UnsupportedFormat(
                "file shorter than a magic number".into(),
            ));
        }
        let le = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
        let (order, nanos) = match le {
            MAGIC_MICROS => (ByteOrder::Little, false),
            MAGIC_NANOS => (ByteOrder::Little, true),
            m if m.swap_bytes() == MAGIC_MICROS => (ByteOrder::Big, false),
            m if m.swap_bytes() == MAGIC_NANOS => (ByteOrder::Big, true),
            PCAPNG_SHB => return Err(CaptureError::Pcapng),
            m => {
                return Err(CaptureError::UnsupportedFormat(format!(
                    "unknown magic {m:#010x}"
                )))
            }
        };
        if got < FILE_HEADER_LEN {
            return Err(CaptureError::TruncatedFile { records: 0 });
        }
        Ok(Self {
            inner,
            order,
            nanos,
            link_type: order.u32(&header[20..24]),
            records: 0,
            out_of_order: 0,
            last_ts: None,
            finished: false,
        })
    }

    pub fn link_type(&self) -> u32 {
        self.link_type
    }

    pub fn is_nanosecond(&self) -> bool {
        self.nanos
    }

    /// Complete records yielded so far.
    pub fn records_read(&self) -> usize {
        self.records
    }

    /// Records whose timestamp went backwards relative to the previous one.
    pub fn out_of_order(&self) -> usize {
        self.out_of_order
    }

    fn next_record(&mut self) -> Result<Option<CaptureRecord>, CaptureError> {
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        let got = read_up_to(&mut self.inner, &mut hdr)?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            return Err(CaptureError::TruncatedFile {
                records: self.records,
            });
        }
        let secs = self.order.u32(&hdr[0..4]);
        let frac = self.order.u32(&hdr[4..8]);
        let incl_len = self.order.u32(&hdr[8..12]);
        if incl_len > MAX_RECORD_LEN {
            return Err(CaptureError::UnsupportedFormat(format!(
                "record {} claims {incl_len} octets",
                self.records
            )));
        }
        let mut frame = vec![0u8; incl_len as usize];
        if read_up_to(&mut self.inner, &mut frame)? < frame.len() {
            return Err(CaptureError::TruncatedFile {
                records: self.records,
            });
        }
        let nanos = if self.nanos {
            frac
        } else {
            frac.saturating_mul(1000)
        };
        let timestamp = Timestamp::from_parts(i64::from(secs), nanos.min(999_999_999));
        if self.last_ts.is_some_and(|prev| timestamp < prev) {
            self.out_of_order += 1;
        }
        self.last_ts = Some(timestamp);
        self.records += 1;
        Ok(Some(CaptureRecord { timestamp, frame }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<CaptureRecord, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => {
                self.finished = true;
                None
            }
            Err(e) => {
                self.finished = true;
                Some(Err(e))
            }
        }
    }
}

/// Writes little-endian classic pcap with Ethernet link type.
pub struct PcapWriter<W: Write> {
    inner: W,
    nanos: bool,
}

impl PcapWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, nanos: bool) -> io::Result<Self> {
        PcapWriter::new(BufWriter::new(File::create(path)?), nanos)
    }
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, nanos: bool) -> io::Result<Self> {
        let magic = if nanos { MAGIC_NANOS } else { MAGIC_MICROS };
        inner.write_all(&magic.to_le_bytes())?;
        inner.write_all(&2u16.to_le_bytes())?;
        inner.write_all(&4u16.to_le_bytes())?;
        inner.write_all(&0i32.to_le_bytes())?;
        inner.write_all(&0u32.to_le_bytes())?;
        inner.write_all(&65_535u32.to_le_bytes())?;
        inner.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
        Ok(Self { inner, nanos })
    }

    pub fn write_record(&mut self, timestamp: Timestamp, frame: &[u8]) -> io::Result<()> {
        let frac = if self.nanos {
            timestamp.subsec_nanos()
        } else {
            timestamp.subsec_nanos() / 1000
        };
        self.inner
            .write_all(&(timestamp.secs() as u32).to_le_bytes())?;
        self.inner.write_all(&frac.to_le_bytes())?;
        self.inner.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.inner.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.inner.write_all(frame)
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(records: &[(Timestamp, Vec<u8>)], nanos: bool) -> Vec<u8> {
        let mut w = PcapWriter::new(Vec::new(), nanos).unwrap();
        for (ts, f) in records {
            w.write_record(*ts, f).unwrap();
        }
        w.into_inner().unwrap()
    }

    #[test]
    fn header_only_file_is_empty() {
        let bytes = write(&[], false);
        assert_eq!(bytes.len(), 24);
        let reader = PcapReader::new(bytes.as_slice()).unwrap();
        assert_eq!(reader.count(), 0);
    }

    #[test]
    fn round_trips_own_writer_output() {
        let recs = vec![
            (Timestamp::from_parts(100, 5_000), vec![1u8; 60]),
            (Timestamp::from_parts(101, 0), vec![2u8; 42]),
        ];
        for nanos in [false, true] {
            let bytes = write(&recs, nanos);
            let got: Vec<_> = PcapReader::new(bytes.as_slice())
                .unwrap()
                .map(Result::unwrap)
                .collect();
            assert_eq!(got.len(), 2);
            for (g, (ts, f)) in got.iter().zip(&recs) {
                assert_eq!(&g.frame, f);
                assert_eq!(g.timestamp, *ts);
            }
        }
    }

    #[test]
    fn nanosecond_precision_preserved() {
        let ts = Timestamp::from_parts(7, 123_456_789);
        let bytes = write(&[(ts, vec![0; 14])], true);
        let rec = PcapReader::new(bytes.as_slice())
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(rec.timestamp, ts);
    }

    #[test]
    fn big_endian_files_are_read() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC_MICROS.to_be_bytes());
        bytes.extend_from_slice(&2u16.to_be_bytes());
        bytes.extend_from_slice(&4u16.to_be_bytes());
        bytes.extend_from_slice(&[0; 8]);
        bytes.extend_from_slice(&65535u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&10u32.to_be_bytes());
        bytes.extend_from_slice(&250_000u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 8, 9]);
        let mut r = PcapReader::new(bytes.as_slice()).unwrap();
        assert_eq!(r.link_type(), 1);
        let rec = r.next().unwrap().unwrap();
        assert_eq!(rec.frame, vec![7, 8, 9]);
        assert_eq!(rec.timestamp, Timestamp::from_parts(10, 250_000_000));
    }

    #[test]
    fn truncated_tail_yields_prior_records_first() {
        let recs = vec![
            (Timestamp::from_parts(1, 0), vec![1u8; 60]),
            (Timestamp::from_parts(2, 0), vec![2u8; 60]),
        ];
        let bytes = write(&recs, false);
        let cut = &bytes[..bytes.len() - 10];
        let items: Vec<_> = PcapReader::new(cut).unwrap().collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        assert!(matches!(
            items[1],
            Err(CaptureError::TruncatedFile { records: 1 })
        ));
    }

    #[test]
    fn pcapng_is_reported_distinctly() {
        let bytes = [0x0A, 0x0D, 0x0D, 0x0A, 0, 0, 0, 0];
        assert!(matches!(
            PcapReader::new(&bytes[..]),
            Err(CaptureError::Pcapng)
        ));
    }

    #[test]
    fn bad_magic_is_unsupported() {
        let bytes = [0u8; 24];
        assert!(matches!(
            PcapReader::new(&bytes[..]),
            Err(CaptureError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn out_of_order_timestamps_are_counted() {
        let bytes = write(
            &[
                (Timestamp::from_parts(5, 0), vec![0; 14]),
                (Timestamp::from_parts(4, 0), vec![0; 14]),
            ],
            false,
        );
        let mut r = PcapReader::new(bytes.as_slice()).unwrap();
        while r.next().is_some() {}
        assert_eq!(r.out_of_order(), 1);
        assert_eq!(r.records_read(), 2);
    }
}
