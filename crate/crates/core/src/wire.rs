//! Fixed 20-byte telemetry frame and an incremental, resynchronizing decoder.
//!
//! ```text
//!  0-1  sync 0xA5 0x5A
//!  2    version (0x01 standard, 0x02 with hundredths residuals)
//!  3-4  node id        u16 BE
//!  5-6  sequence       u16 BE, wraps
//!  7    flags          bit0 buzzer, bit1 led, bit2 sensor fault, bits 3-7 zero
//!  8-9  body temp      i16 BE, hundredths of a degree C
//! 10-11 ambient temp   i16 BE, hundredths of a degree C
//! 12-13 humidity       u16 BE, tenths of a percent
//! 14-15 air quality    u16 BE, tenths of a ppm
//! 16    heart rate     u8, bpm
//! 17    reserved       0x00 in version 1; in version 2 the high nibble holds the
//!                      humidity hundredths residual and the low nibble the air
//!                      quality residual, both signed 4-bit in -5..=4
//! 18-19 CRC-16/CCITT-FALSE over bytes 2-17, BE
//! ```

use thiserror::Error;

use crate::domain::{DeviceFlags, NodeId, Parameter, RawReading};
use crate::fixed::Centi;

pub const FRAME_LEN: usize = 20;
pub const SYNC: [u8; 2] = [0xA5, 0x5A];
pub const VERSION_STANDARD: u8 = 0x01;
pub const VERSION_EXTENDED: u8 = 0x02;

const MAX_BUFFER: usize = 2 * FRAME_LEN;

const CRC_TABLE: [u16; 256] = build_crc_table();

const fn build_crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xor-out.
pub fn crc16(bytes: &[u8]) -> u16 {
    bytes.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ CRC_TABLE[usize::from((crc >> 8) as u8 ^ b)]
    })
}

/// How much precision humidity and air quality carry on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WirePrecision {
    /// Version 1: tenths only, round-half-up.
    #[default]
    Standard,
    /// Version 2: tenths plus the hundredths residual in byte 17.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field} cannot be encoded: {reason}")]
pub struct EncodeError {
    pub field: Parameter,
    pub reason: String,
}

pub type Frame = [u8; FRAME_LEN];

/// Encodes a version 1 frame.
pub fn encode_frame(reading: &RawReading) -> Result<Frame, EncodeError> {
    encode_frame_with(reading, WirePrecision::Standard)
}

pub fn encode_frame_with(reading: &RawReading, precision: WirePrecision) -> Result<Frame, EncodeError> {
    let body_temp = encode_temperature(Parameter::BodyTemp, reading.body_temp)?;
    let ambient_temp = encode_temperature(Parameter::AmbientTemp, reading.ambient_temp)?;
    let (humidity, humidity_residual) =
        encode_tenths(Parameter::Humidity, reading.humidity, Centi::from_units(100))?;
    let (air, air_residual) =
        encode_tenths(Parameter::AirQuality, reading.air_quality, Centi::from_hundredths(655_354))?;
    let heart_rate = u8::try_from(reading.heart_rate).map_err(|_| EncodeError {
        field: Parameter::HeartRate,
        reason: format!("{} bpm outside 0..=255", reading.heart_rate),
    })?;

    let (version, reserved) = match precision {
        WirePrecision::Standard => (VERSION_STANDARD, 0),
        WirePrecision::Extended => (
            VERSION_EXTENDED,
            ((humidity_residual as u8 & 0x0F) << 4) | (air_residual as u8 & 0x0F),
        ),
    };

    let mut frame = [0u8; FRAME_LEN];
    frame[0..2].copy_from_slice(&SYNC);
    frame[2] = version;
    frame[3..5].copy_from_slice(&reading.node_id.0.to_be_bytes());
    frame[5..7].copy_from_slice(&reading.seq.to_be_bytes());
    frame[7] = reading.flags.bits();
    frame[8..10].copy_from_slice(&body_temp.to_be_bytes());
    frame[10..12].copy_from_slice(&ambient_temp.to_be_bytes());
    frame[12..14].copy_from_slice(&humidity.to_be_bytes());
    frame[14..16].copy_from_slice(&air.to_be_bytes());
    frame[16] = heart_rate;
    frame[17] = reserved;
    let crc = crc16(&frame[2..18]);
    frame[18..20].copy_from_slice(&crc.to_be_bytes());
    Ok(frame)
}

fn encode_temperature(field: Parameter, value: Centi) -> Result<i16, EncodeError> {
    i16::try_from(value.hundredths()).map_err(|_| EncodeError {
        field,
        reason: format!("{value} outside ±327.67"),
    })
}

/// Splits a hundredths value into half-up tenths and the signed residual.
fn encode_tenths(field: Parameter, value: Centi, max: Centi) -> Result<(u16, i8), EncodeError> {
    if value < Centi::ZERO || value > max {
        return Err(EncodeError {
            field,
            reason: format!("{value} outside 0..={max}"),
        });
    }
    let tenths = value.round_tenths();
    let residual = value.hundredths() - tenths * 10;
    Ok((tenths as u16, residual as i8))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeFault {
    #[error("CRC mismatch")]
    BadCrc,
    #[error("unsupported frame version {0:#04x}")]
    BadVersion(u8),
    #[error("reserved bits set")]
    NonZeroReservedBits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedFrame {
    pub version: u8,
    pub reading: RawReading,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    pub frames: Vec<DecodedFrame>,
    pub faults: Vec<DecodeFault>,
}

/// Per-connection decoder. Chunks may split frames anywhere; corruption only
/// ever produces faults.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    discarded_bytes: u64,
    crc_failures: u64,
    frames_decoded: u64,
    faults: u64,
}

impl Decoder {
    pub fn new() -> Self {
        Decoder {
            buf: Vec::with_capacity(MAX_BUFFER),
            ..Default::default()
        }
    }

    pub fn discarded_bytes(&self) -> u64 {
        self.discarded_bytes
    }

    pub fn crc_failures(&self) -> u64 {
        self.crc_failures
    }

    pub fn frames_decoded(&self) -> u64 {
        self.frames_decoded
    }

    pub fn faults(&self) -> u64 {
        self.faults
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn feed(&mut self, chunk: &[u8]) -> DecodeOutput {
        let mut out = DecodeOutput::default();
        for &byte in chunk {
            self.buf.push(byte);
            self.scan(&mut out);
            debug_assert!(self.buf.len() <= MAX_BUFFER);
        }
        out
    }

    fn scan(&mut self, out: &mut DecodeOutput) {
        loop {
            self.align();
            if self.buf.len() < FRAME_LEN {
                return;
            }
            let candidate: &[u8] = &self.buf[..FRAME_LEN];
            let crc = u16::from_be_bytes([candidate[18], candidate[19]]);
            if crc16(&candidate[2..18]) != crc {
                self.crc_failures += 1;
                self.record_fault(out, DecodeFault::BadCrc);
                // Drop the sync byte only; a real frame may start inside.
                self.buf.remove(0);
                self.discarded_bytes += 1;
                continue;
            }
            let result = parse_checked(candidate);
            self.buf.drain(..FRAME_LEN);
            match result {
                Ok(frame) => {
                    self.frames_decoded += 1;
                    out.frames.push(frame);
                }
                Err(fault) => self.record_fault(out, fault),
            }
        }
    }

    fn record_fault(&mut self, out: &mut DecodeOutput, fault: DecodeFault) {
        self.faults += 1;
        out.faults.push(fault);
    }

    /// Discards bytes until the buffer starts with the sync word (or a lone
    /// first sync byte awaiting its partner).
    fn align(&mut self) {
        let mut skip = 0;
        while skip < self.buf.len() {
            let rest = &self.buf[skip..];
            if rest[0] == SYNC[0] && (rest.len() < 2 || rest[1] == SYNC[1]) {
                break;
            }
            skip += 1;
        }
        if skip > 0 {
            self.buf.drain(..skip);
            self.discarded_bytes += skip as u64;
        }
    }
}

/// Parses a CRC-verified frame.
fn parse_checked(frame: &[u8]) -> Result<DecodedFrame, DecodeFault> {
    let version = frame[2];
    if version != VERSION_STANDARD && version != VERSION_EXTENDED {
        return Err(DecodeFault::BadVersion(version));
    }
    let flags = frame[7];
    if flags & !DeviceFlags::KNOWN_BITS != 0 {
        return Err(DecodeFault::NonZeroReservedBits);
    }
    let reserved = frame[17];
    let (humidity_residual, air_residual) = match version {
        VERSION_STANDARD if reserved != 0 => return Err(DecodeFault::NonZeroReservedBits),
        VERSION_STANDARD => (0, 0),
        _ => {
            let high = nibble_to_i8(reserved >> 4);
            let low = nibble_to_i8(reserved & 0x0F);
            if !(-5..=4).contains(&high) || !(-5..=4).contains(&low) {
                return Err(DecodeFault::NonZeroReservedBits);
            }
            (high as i64, low as i64)
        }
    };
    let be16 = |i: usize| u16::from_be_bytes([frame[i], frame[i + 1]]);
    let reading = RawReading {
        node_id: NodeId(be16(3)),
        seq: be16(5),
        flags: DeviceFlags::from_bits_truncate(flags),
        body_temp: Centi::from_hundredths(be16(8) as i16 as i64),
        ambient_temp: Centi::from_hundredths(be16(10) as i16 as i64),
        humidity: Centi::from_hundredths(be16(12) as i64 * 10 + humidity_residual),
        air_quality: Centi::from_hundredths(be16(14) as i64 * 10 + air_residual),
        heart_rate: frame[16] as i32,
    };
    Ok(DecodedFrame { version, reading })
}

fn nibble_to_i8(nibble: u8) -> i8 {
    ((nibble << 4) as i8) >> 4
}

/// Decodes a complete buffer in one go with a fresh decoder.
pub fn decode_all(bytes: &[u8]) -> DecodeOutput {
    Decoder::new().feed(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(node: u16, seq: u16) -> RawReading {
        RawReading {
            node_id: NodeId(node),
            seq,
            body_temp: Centi::from_hundredths(3419),
            ambient_temp: Centi::from_hundredths(3117),
            humidity: Centi::from_hundredths(7351),
            air_quality: Centi::from_hundredths(38944),
            heart_rate: 68,
            flags: DeviceFlags::empty(),
        }
    }

    #[test]
    fn crc_check_values() {
        assert_eq!(crc16(b"123456789"), 0x29B1);
        assert_eq!(crc16(&[]), 0xFFFF);
        assert_eq!(crc16(&[0x00]), 0xE1F0);
    }

    #[test]
    fn person_one_payload_layout() {
        let frame = encode_frame(&reading(1, 0)).unwrap();
        assert_eq!(&frame[8..17], &[0x0D, 0x5B, 0x0C, 0x2D, 0x02, 0xDF, 0x0F, 0x36, 0x44]);
        assert_eq!(frame[17], 0);
    }

    #[test]
    fn zero_frame_payload_is_zero() {
        let zero = RawReading {
            node_id: NodeId(0),
            seq: 0,
            body_temp: Centi::ZERO,
            ambient_temp: Centi::ZERO,
            humidity: Centi::ZERO,
            air_quality: Centi::ZERO,
            heart_rate: 0,
            flags: DeviceFlags::empty(),
        };
        let frame = encode_frame(&zero).unwrap();
        assert!(frame[3..18].iter().all(|&b| b == 0));
    }

    #[test]
    fn unrepresentable_fields_are_named() {
        let mut r = reading(1, 0);
        r.body_temp = Centi::from_hundredths(32_768);
        assert_eq!(encode_frame(&r).unwrap_err().field, Parameter::BodyTemp);
        let mut r = reading(1, 0);
        r.humidity = Centi::from_hundredths(10_001);
        assert_eq!(encode_frame(&r).unwrap_err().field, Parameter::Humidity);
        let mut r = reading(1, 0);
        r.air_quality = Centi::from_hundredths(655_355);
        assert_eq!(encode_frame(&r).unwrap_err().field, Parameter::AirQuality);
        let mut r = reading(1, 0);
        r.heart_rate = 256;
        assert_eq!(encode_frame(&r).unwrap_err().field, Parameter::HeartRate);
        let mut r = reading(1, 0);
        r.ambient_temp = Centi::from_hundredths(-32_768);
        assert!(encode_frame(&r).is_ok());
    }

    #[test]
    fn standard_precision_rounds_to_tenths() {
        let frame = encode_frame(&reading(1, 0)).unwrap();
        let decoded = decode_all(&frame).frames[0].reading;
        assert_eq!(decoded.humidity, Centi::from_hundredths(7350));
        assert_eq!(decoded.air_quality, Centi::from_hundredths(38940));
    }

    #[test]
    fn extended_precision_is_exact() {
        let r = reading(1, 0);
        let frame = encode_frame_with(&r, WirePrecision::Extended).unwrap();
        assert_eq!(frame[2], VERSION_EXTENDED);
        assert_eq!(frame[17], 0x14);
        let decoded = decode_all(&frame).frames[0];
        assert_eq!(decoded.version, VERSION_EXTENDED);
        assert_eq!(decoded.reading, r);
    }

    #[test]
    fn one_byte_chunks() {
        let frame = encode_frame(&reading(3, 9)).unwrap();
        let mut decoder = Decoder::new();
        for (i, byte) in frame.iter().enumerate() {
            let out = decoder.feed(std::slice::from_ref(byte));
            if i < FRAME_LEN - 1 {
                assert!(out.frames.is_empty());
            } else {
                assert_eq!(out.frames.len(), 1);
            }
        }
        assert_eq!(decoder.buffered(), 0);
    }

    #[test]
    fn flipped_payload_byte_is_a_crc_fault() {
        let mut frame = encode_frame(&reading(1, 0)).unwrap();
        frame[9] ^= 0x01;
        let out = decode_all(&frame);
        assert!(out.frames.is_empty());
        assert_eq!(out.faults, vec![DecodeFault::BadCrc]);
    }

    #[test]
    fn garbage_prefix_is_counted() {
        let garbage = [0x00, 0x13, 0x5A, 0xFF, 0x42, 0x07, 0x99];
        let mut stream = garbage.to_vec();
        stream.extend_from_slice(&encode_frame(&reading(1, 0)).unwrap());
        let mut decoder = Decoder::new();
        let out = decoder.feed(&stream);
        assert_eq!(out.frames.len(), 1);
        assert_eq!(decoder.discarded_bytes(), 7);
    }

    #[test]
    fn lone_sync_byte_before_frame() {
        let mut stream = vec![0xA5];
        stream.extend_from_slice(&encode_frame(&reading(1, 0)).unwrap());
        let mut decoder = Decoder::new();
        assert_eq!(decoder.feed(&stream).frames.len(), 1);
        assert_eq!(decoder.discarded_bytes(), 1);
    }

    #[test]
    fn false_sync_inside_garbage_does_not_swallow_the_frame() {
        let mut stream = vec![0x11, 0xA5, 0x5A, 0x01, 0x02];
        stream.extend_from_slice(&encode_frame(&reading(2, 4)).unwrap());
        let out = decode_all(&stream);
        assert_eq!(out.frames.len(), 1);
        assert_eq!(out.frames[0].reading.node_id, NodeId(2));
        assert!(out.faults.contains(&DecodeFault::BadCrc));
    }

    fn reseal(frame: &mut Frame) {
        let crc = crc16(&frame[2..18]);
        frame[18..20].copy_from_slice(&crc.to_be_bytes());
    }

    #[test]
    fn version_and_reserved_faults() {
        let mut bad_version = encode_frame(&reading(1, 0)).unwrap();
        bad_version[2] = 0x07;
        reseal(&mut bad_version);
        assert_eq!(decode_all(&bad_version).faults, vec![DecodeFault::BadVersion(0x07)]);

        let mut bad_flags = encode_frame(&reading(1, 0)).unwrap();
        bad_flags[7] = 0x08;
        reseal(&mut bad_flags);
        assert_eq!(decode_all(&bad_flags).faults, vec![DecodeFault::NonZeroReservedBits]);

        let mut bad_reserved = encode_frame(&reading(1, 0)).unwrap();
        bad_reserved[17] = 0x01;
        reseal(&mut bad_reserved);
        assert_eq!(decode_all(&bad_reserved).faults, vec![DecodeFault::NonZeroReservedBits]);

        let mut bad_residual = encode_frame_with(&reading(1, 0), WirePrecision::Extended).unwrap();
        bad_residual[17] = 0x50; // +5 is never produced by half-up rounding
        reseal(&mut bad_residual);
        assert_eq!(decode_all(&bad_residual).faults, vec![DecodeFault::NonZeroReservedBits]);
    }

    #[test]
    fn rejected_frame_does_not_block_the_next() {
        let mut bad = encode_frame(&reading(1, 0)).unwrap();
        bad[2] = 0x09;
        reseal(&mut bad);
        let mut stream = bad.to_vec();
        stream.extend_from_slice(&encode_frame(&reading(1, 1)).unwrap());
        let out = decode_all(&stream);
        assert_eq!(out.frames.len(), 1);
        assert_eq!(out.frames[0].reading.seq, 1);
    }
}
