//! JSON reports with fixed field order and 17-significant-digit floats.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::Formatter;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TOOL: &str = "nsqstab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Compact JSON, floats as `d.dddddddddddddddde±x`.
#[derive(Debug, Default, Clone, Copy)]
struct FixedFloats;

impl Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` on a single line. Non-finite floats become `null`.
pub fn to_line<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats);
    value
        .serialize(&mut ser)
        .expect("report types serialize infallibly");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub input_sha256: Option<&'a str>,
    pub exit_code: i32,
    pub result: &'a T,
}

impl<'a, T: Serialize> Report<'a, T> {
    pub fn new(
        config: &'a RunConfig,
        input_sha256: Option<&'a str>,
        exit_code: i32,
        result: &'a T,
    ) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            config,
            input_sha256,
            exit_code,
            result,
        }
    }
}
