//! Fixtures shared by the criterion benches.

use bacscope_core::codec::parse_frame;
use bacscope_core::synth::{self, SyntheticFrame};
use bacscope_core::ParsedPacket;

pub const SEED: u64 = 7;

/// Table 1 traffic with roughly `packets` frames in total.
pub fn table1_frames(packets: usize) -> Vec<SyntheticFrame> {
    let mut frames = synth::table1_stream(packets / 4 + 1, SEED);
    frames.truncate(packets);
    frames
}

pub fn decode(frames: &[SyntheticFrame]) -> Vec<ParsedPacket> {
    frames
        .iter()
        .filter_map(|f| parse_frame(&f.frame, f.timestamp).ok().flatten())
        .collect()
}
