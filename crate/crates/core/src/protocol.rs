//! Newline-delimited ASCII wire protocol between the wearable (or simulator)
//! and the host.
//!
//! ```text
//! HELLO,<protocol_version>
//! SAMPLE,<t_ms>,<dev:1|2>,<yaw:%.2f>,<pitch:%.2f>,<roll:%.2f>
//! RAW,<t_ms>,<dev>,<ax>,<ay>,<az>,<gx>,<gy>,<gz>,<mx>,<my>,<mz>
//! BYE
//! ```
//!
//! `RAW` carries accelerometer (g), gyroscope (deg/s) and normalized
//! magnetometer triplets; an all-zero magnetometer triplet means "absent".

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::orientation::{Euler, RawSample, Vec3};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    /// Upper-arm sensor.
    #[serde(rename = "IMU1")]
    Imu1,
    /// Distal sensor (hand dorsum or forearm).
    #[serde(rename = "IMU2")]
    Imu2,
}

impl Device {
    pub fn index(self) -> usize {
        match self {
            Device::Imu1 => 0,
            Device::Imu2 => 1,
        }
    }

    pub fn wire_code(self) -> u8 {
        self.index() as u8 + 1
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IMU{}", self.wire_code())
    }
}

/// One fused orientation sample from one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuFrame {
    pub t_ms: u64,
    pub device: Device,
    #[serde(flatten)]
    pub angles: Euler,
}

impl ImuFrame {
    pub fn new(t_ms: u64, device: Device, angles: Euler) -> Self {
        ImuFrame { t_ms, device, angles }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub t_ms: u64,
    pub device: Device,
    pub sample: RawSample,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Hello { version: u32 },
    Sample(ImuFrame),
    Raw(RawFrame),
    Bye,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("empty line")]
    Empty,
    #[error("unknown record type `{0}`")]
    UnknownRecord(String),
    #[error("wrong field count for {record}: expected {expected}, found {found}")]
    FieldCount { record: &'static str, expected: usize, found: usize },
    #[error("{field} is not numeric: `{value}`")]
    NotNumeric { field: &'static str, value: String },
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
}

impl ProtocolError {
    /// Name of the offending field, when the error concerns one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ProtocolError::NotNumeric { field, .. } | ProtocolError::OutOfRange { field, .. } => {
                Some(field)
            }
            ProtocolError::UnknownDevice(_) => Some("device"),
            _ => None,
        }
    }
}

/// Writes `deg` rounded half away from zero to two decimals. A value that
/// rounds to +180.00 is written as -180.00 so it stays in `[-180, 180)`.
pub fn write_centidegrees(out: &mut String, deg: f64) {
    let mut c = math::round(deg * 100.0) as i64;
    if c >= 18000 {
        c -= 36000;
    }
    let sign = if c < 0 { "-" } else { "" };
    let a = c.unsigned_abs();
    let _ = write!(out, "{sign}{}.{:02}", a / 100, a % 100);
}

/// Encodes a fused frame as one newline-terminated `SAMPLE` record.
pub fn encode_frame(frame: &ImuFrame) -> String {
    let mut s = String::with_capacity(40);
    let _ = write!(s, "SAMPLE,{},{},", frame.t_ms, frame.device.wire_code());
    write_centidegrees(&mut s, frame.angles.yaw_deg);
    s.push(',');
    write_centidegrees(&mut s, frame.angles.pitch_deg);
    s.push(',');
    write_centidegrees(&mut s, frame.angles.roll_deg);
    s.push('\n');
    s
}

pub fn encode_raw(frame: &RawFrame) -> String {
    let s = &frame.sample;
    let m = s.mag.unwrap_or(Vec3::ZERO);
    let mut out = format!("RAW,{},{}", frame.t_ms, frame.device.wire_code());
    for v in [s.accel_g, s.gyro_dps, m] {
        let _ = write!(out, ",{:.6},{:.6},{:.6}", v.x, v.y, v.z);
    }
    out.push('\n');
    out
}

pub fn encode_record(record: &Record) -> String {
    match record {
        Record::Hello { version } => format!("HELLO,{version}\n"),
        Record::Sample(f) => encode_frame(f),
        Record::Raw(f) => encode_raw(f),
        Record::Bye => "BYE\n".to_string(),
    }
}

/// Decodes one `SAMPLE` line (trailing newline optional).
pub fn decode_frame(line: &str) -> Result<ImuFrame, ProtocolError> {
    match decode_record(line)? {
        Record::Sample(f) => Ok(f),
        other => Err(ProtocolError::UnknownRecord(record_name(&other).to_string())),
    }
}

fn record_name(r: &Record) -> &'static str {
    match r {
        Record::Hello { .. } => "HELLO",
        Record::Sample(_) => "SAMPLE",
        Record::Raw(_) => "RAW",
        Record::Bye => "BYE",
    }
}

pub fn decode_record(line: &str) -> Result<Record, ProtocolError> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line.trim().is_empty() {
        return Err(ProtocolError::Empty);
    }
    let fields: alloc::vec::Vec<&str> = line.split(',').collect();
    let expect = |record: &'static str, n: usize| {
        if fields.len() == n {
            Ok(())
        } else {
            Err(ProtocolError::FieldCount { record, expected: n, found: fields.len() })
        }
    };
    match fields[0] {
        "HELLO" => {
            expect("HELLO", 2)?;
            let version = fields[1].trim().parse().map_err(|_| ProtocolError::NotNumeric {
                field: "protocol_version",
                value: fields[1].to_string(),
            })?;
            Ok(Record::Hello { version })
        }
        "BYE" => {
            expect("BYE", 1)?;
            Ok(Record::Bye)
        }
        "SAMPLE" => {
            expect("SAMPLE", 6)?;
            let t_ms = parse_t(fields[1])?;
            let device = parse_device(fields[2])?;
            let yaw = parse_angle("yaw", fields[3])?;
            let pitch = parse_angle("pitch", fields[4])?;
            let roll = parse_angle("roll", fields[5])?;
            Ok(Record::Sample(ImuFrame::new(t_ms, device, Euler::new(yaw, pitch, roll))))
        }
        "RAW" => {
            expect("RAW", 12)?;
            const NAMES: [&str; 9] = ["ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"];
            let t_ms = parse_t(fields[1])?;
            let device = parse_device(fields[2])?;
            let mut v = [0.0; 9];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = parse_f64(NAMES[i], fields[3 + i])?;
            }
            let mag = Vec3::new(v[6], v[7], v[8]);
            Ok(Record::Raw(RawFrame {
                t_ms,
                device,
                sample: RawSample {
                    accel_g: Vec3::new(v[0], v[1], v[2]),
                    gyro_dps: Vec3::new(v[3], v[4], v[5]),
                    mag: (mag != Vec3::ZERO).then_some(mag),
                },
            }))
        }
        other => Err(ProtocolError::UnknownRecord(other.to_string())),
    }
}

fn parse_t(s: &str) -> Result<u64, ProtocolError> {
    s.trim()
        .parse()
        .map_err(|_| ProtocolError::NotNumeric { field: "t_ms", value: s.to_string() })
}

fn parse_device(s: &str) -> Result<Device, ProtocolError> {
    match s.trim() {
        "1" => Ok(Device::Imu1),
        "2" => Ok(Device::Imu2),
        other => Err(ProtocolError::UnknownDevice(other.to_string())),
    }
}

fn parse_f64(field: &'static str, s: &str) -> Result<f64, ProtocolError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| ProtocolError::NotNumeric { field, value: s.to_string() })?;
    if !v.is_finite() {
        return Err(ProtocolError::NotNumeric { field, value: s.to_string() });
    }
    Ok(v)
}

fn parse_angle(field: &'static str, s: &str) -> Result<f64, ProtocolError> {
    let v = parse_f64(field, s)?;
    if !(-180.0..180.0).contains(&v) {
        return Err(ProtocolError::OutOfRange { field, value: v });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_frame() {
        let f = ImuFrame::new(0, Device::Imu1, Euler::default());
        assert_eq!(encode_frame(&f), "SAMPLE,0,1,0.00,0.00,0.00\n");
        assert_eq!(decode_frame("SAMPLE,0,1,0.00,0.00,0.00").unwrap(), f);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let f = ImuFrame::new(20, Device::Imu2, Euler::new(12.345, -0.004, -12.345));
        assert_eq!(encode_frame(&f), "SAMPLE,20,2,12.35,0.00,-12.35\n");
        let f = ImuFrame::new(1, Device::Imu2, Euler::new(-0.5, 0.05, 179.999));
        assert_eq!(encode_frame(&f), "SAMPLE,1,2,-0.50,0.05,-180.00\n");
    }

    #[test]
    fn decode_errors_name_the_field() {
        let e = decode_frame("SAMPLE,0,3,0,0,0").unwrap_err();
        assert_eq!(e, ProtocolError::UnknownDevice("3".into()));
        assert!(e.to_string().contains("unknown device"));

        let e = decode_frame("SAMPLE,5,2,190.00,0,0").unwrap_err();
        assert_eq!(e.to_string(), "yaw out of range: 190");
        assert_eq!(e.field(), Some("yaw"));

        let e = decode_frame("SAMPLE,5,2,10,abc,0").unwrap_err();
        assert_eq!(e.field(), Some("pitch"));

        let e = decode_frame("SAMPLE,5,2,10,0").unwrap_err();
        assert!(matches!(e, ProtocolError::FieldCount { expected: 6, found: 5, .. }));

        assert!(matches!(decode_frame("SAMPLE,-1,1,0,0,0"), Err(ProtocolError::NotNumeric { field: "t_ms", .. })));
        assert!(matches!(decode_frame("SAMPLE,1,1,NaN,0,0"), Err(ProtocolError::NotNumeric { .. })));
        assert!(matches!(decode_frame("SAMPLE,1,1,180.00,0,0"), Err(ProtocolError::OutOfRange { .. })));
        assert_eq!(decode_record("  \n"), Err(ProtocolError::Empty));
        assert!(matches!(decode_record("PING"), Err(ProtocolError::UnknownRecord(_))));
    }

    #[test]
    fn control_records() {
        assert_eq!(encode_record(&Record::Hello { version: PROTOCOL_VERSION }), "HELLO,1\n");
        assert_eq!(decode_record("HELLO,1\r\n").unwrap(), Record::Hello { version: 1 });
        assert_eq!(decode_record("BYE").unwrap(), Record::Bye);
        assert!(decode_frame("BYE").is_err());
    }

    #[test]
    fn raw_roundtrip() {
        let raw = RawFrame {
            t_ms: 40,
            device: Device::Imu2,
            sample: RawSample {
                accel_g: Vec3::new(0.01, -0.02, 0.99),
                gyro_dps: Vec3::new(1.5, 0.0, -3.25),
                mag: Some(Vec3::new(0.6, 0.0, -0.8)),
            },
        };
        let line = encode_raw(&raw);
        assert!(line.starts_with("RAW,40,2,0.010000,-0.020000,0.990000,"));
        assert_eq!(decode_record(&line).unwrap(), Record::Raw(raw));

        let no_mag = RawFrame { sample: RawSample { mag: None, ..raw.sample }, ..raw };
        assert_eq!(decode_record(&encode_raw(&no_mag)).unwrap(), Record::Raw(no_mag));
    }

    fn circ_err(a: f64, b: f64) -> f64 {
        math::abs(math::angle_diff_deg(a, b))
    }

    proptest! {
        #[test]
        fn frame_roundtrip(
            t in 0u64..10_000_000, dev in 0u8..2,
            yaw in -180.0f64..180.0, pitch in -180.0f64..180.0, roll in -180.0f64..180.0,
        ) {
            let device = if dev == 0 { Device::Imu1 } else { Device::Imu2 };
            let f = ImuFrame::new(t, device, Euler::new(yaw, pitch, roll));
            let line = encode_frame(&f);
            prop_assert!(line.ends_with('\n'));
            let back = decode_frame(&line).unwrap();
            prop_assert_eq!(back.t_ms, t);
            prop_assert_eq!(back.device, device);
            prop_assert!(circ_err(back.angles.yaw_deg, yaw) <= 0.005 + 1e-9);
            prop_assert!(circ_err(back.angles.pitch_deg, pitch) <= 0.005 + 1e-9);
            prop_assert!(circ_err(back.angles.roll_deg, roll) <= 0.005 + 1e-9);
            // Re-encoding a decoded frame is byte-stable.
            prop_assert_eq!(encode_frame(&back), line);
        }
    }
}
