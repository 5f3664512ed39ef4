//! Serialization helpers: every real goes out with 17 significant digits so
//! that files round-trip bit-exactly.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// `{:.16e}` rendering of a finite float: 17 significant digits, valid JSON.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of negative zero out of the files
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

struct SigDigits<'a>(PrettyFormatter<'a>);

impl Formatter for SigDigits<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            // what serde_json itself does with non-finite floats
            return writer.write_all(b"null");
        }
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        writer.write_all(fmt_f64(f64::from(value)).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }
    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }
    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Pretty JSON with 17-significant-digit reals and a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
        assert_eq!(fmt_f64(-0.0), "0.0000000000000000e0");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn json_reals_round_trip() {
        let v = vec![1.0 / 3.0, 1e-300, -2.5e10];
        let s = to_json_string(&v).unwrap();
        assert!(s.contains("3.3333333333333331e-1"));
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(to_json_string(&f64::INFINITY).unwrap(), "null\n");
    }
}
