//! Point-stream files.
//!
//! The binary format is little-endian: the 8-byte magic `CTLOPTS\0`, a
//! `u32` version, then 24-byte records of `t: f64`, `x, y, z: f32`,
//! `sensor: u8` and three zero pad bytes. Files whose name ends in `.csv`
//! hold `t,x,y,z,sensor` rows instead, with an optional header row.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ctlo_core::factors::Measurement;
use ctlo_core::liegroup::Vec3;
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"CTLOPTS\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 12;
pub const RECORD_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub t: f64,
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub sensor: u8,
}

impl PointRecord {
    pub fn measurement(&self) -> Measurement {
        Measurement::new(Vec3::new(self.x as f64, self.y as f64, self.z as f64), self.t, self.sensor as usize)
    }

    /// Narrows a measurement to the file precision.
    pub fn from_measurement(m: &Measurement) -> Result<Self, PointsError> {
        let sensor = u8::try_from(m.sensor).map_err(|_| PointsError::SensorId(m.sensor))?;
        Ok(Self { t: m.t, x: m.p.x as f32, y: m.p.y as f32, z: m.p.z as f32, sensor })
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn encode(&self) -> [u8; RECORD_LEN] {
        let mut b = [0u8; RECORD_LEN];
        b[0..8].copy_from_slice(&self.t.to_le_bytes());
        b[8..12].copy_from_slice(&self.x.to_le_bytes());
        b[12..16].copy_from_slice(&self.y.to_le_bytes());
        b[16..20].copy_from_slice(&self.z.to_le_bytes());
        b[20] = self.sensor;
        b
    }

    fn decode(b: &[u8; RECORD_LEN]) -> Self {
        let f32_at = |i: usize| f32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        Self { t: f64::from_le_bytes(b[0..8].try_into().unwrap()), x: f32_at(8), y: f32_at(12), z: f32_at(16), sensor: b[20] }
    }
}

/// Where in the file a record starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Byte(u64),
    Line(u64),
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Position::Byte(o) => write!(f, "byte offset {o}"),
            Position::Line(l) => write!(f, "line {l}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PointsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a point file: bad magic header")]
    BadMagic,
    #[error("unsupported point file version {0}")]
    Version(u32),
    #[error("truncated record at {0}")]
    Truncated(Position),
    #[error("non-finite value in record at {0}")]
    NonFinite(Position),
    #[error("malformed record at {at}: {message}")]
    Malformed { at: Position, message: String },
    #[error("timestamp regression for sensor {sensor} at {at}: {t} after {previous}")]
    Regression { at: Position, sensor: u8, t: f64, previous: f64 },
    #[error("sensor id {0} does not fit the file format")]
    SensorId(usize),
}

/// Rejects non-finite records and per-sensor timestamp regressions.
#[derive(Debug, Clone)]
struct OrderCheck {
    last: Vec<f64>,
}

impl OrderCheck {
    fn new() -> Self {
        Self { last: vec![f64::NEG_INFINITY; 256] }
    }

    fn check(&mut self, r: PointRecord, at: Position) -> Result<PointRecord, PointsError> {
        if !r.is_finite() {
            return Err(PointsError::NonFinite(at));
        }
        let previous = &mut self.last[r.sensor as usize];
        if r.t < *previous {
            return Err(PointsError::Regression { at, sensor: r.sensor, t: r.t, previous: *previous });
        }
        *previous = r.t;
        Ok(r)
    }
}

/// Streams records from a binary point file. Iteration stops after the
/// first error.
pub struct BinaryReader<R> {
    inner: R,
    offset: u64,
    order: OrderCheck,
    done: bool,
}

impl<R: Read> BinaryReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PointsError> {
        let mut header = [0u8; HEADER_LEN as usize];
        let n = read_full(&mut inner, &mut header)?;
        if n < 8 || header[..8] != MAGIC {
            return Err(PointsError::BadMagic);
        }
        if n < header.len() {
            return Err(PointsError::Truncated(Position::Byte(8)));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(PointsError::Version(version));
        }
        Ok(Self { inner, offset: HEADER_LEN, order: OrderCheck::new(), done: false })
    }
}

/// Reads until `buf` is full or the stream ends; returns the bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> Iterator for BinaryReader<R> {
    type Item = Result<PointRecord, PointsError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = [0u8; RECORD_LEN];
        let at = Position::Byte(self.offset);
        let result = match read_full(&mut self.inner, &mut buf) {
            Ok(0) => {
                self.done = true;
                return None;
            }
            Ok(n) if n < RECORD_LEN => Err(PointsError::Truncated(at)),
            Ok(_) => self.order.check(PointRecord::decode(&buf), at),
            Err(e) => Err(e.into()),
        };
        self.offset += RECORD_LEN as u64;
        self.done = result.is_err();
        Some(result)
    }
}

/// Streams records from a CSV point file: `t,x,y,z,sensor` rows, an
/// optional header row, `#` comments. Iteration stops after the first
/// error.
pub struct CsvReader<R> {
    lines: io::Lines<R>,
    line: u64,
    order: OrderCheck,
    done: bool,
}

impl<R: BufRead> CsvReader<R> {
    pub fn new(inner: R) -> Self {
        Self { lines: inner.lines(), line: 0, order: OrderCheck::new(), done: false }
    }

    fn parse(body: &str, at: Position) -> Result<PointRecord, PointsError> {
        let malformed = |message: String| PointsError::Malformed { at, message };
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(malformed(format!("expected 5 fields, got {}", fields.len())));
        }
        let f32_at = |i: usize| fields[i].parse::<f32>().map_err(|e| malformed(format!("field {}: {e}", i + 1)));
        Ok(PointRecord {
            t: fields[0].parse::<f64>().map_err(|e| malformed(format!("field 1: {e}")))?,
            x: f32_at(1)?,
            y: f32_at(2)?,
            z: f32_at(3)?,
            sensor: fields[4].parse::<u8>().map_err(|e| malformed(format!("field 5: {e}")))?,
        })
    }
}

impl<R: BufRead> Iterator for CsvReader<R> {
    type Item = Result<PointRecord, PointsError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let raw = match self.lines.next()? {
                Ok(raw) => raw,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            };
            self.line += 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() || (self.line == 1 && body.starts_with('t')) {
                continue;
            }
            let at = Position::Line(self.line);
            let result = Self::parse(body, at).and_then(|r| self.order.check(r, at));
            self.done = result.is_err();
            return Some(result);
        }
        None
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub type PointStream = Box<dyn Iterator<Item = Result<PointRecord, PointsError>>>;

/// Opens a point file, choosing the format by extension.
pub fn read_points(path: impl AsRef<Path>) -> Result<PointStream, PointsError> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    if is_csv(path) {
        Ok(Box::new(CsvReader::new(file)))
    } else {
        Ok(Box::new(BinaryReader::new(file)?))
    }
}

/// Writes binary records.
pub fn write_binary<W: Write>(mut out: W, records: impl IntoIterator<Item = PointRecord>) -> io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for r in records {
        out.write_all(&r.encode())?;
    }
    out.flush()
}

/// Writes CSV rows with a header. Floats use their shortest exact
/// representation, so reading them back is lossless.
pub fn write_csv<W: Write>(mut out: W, records: impl IntoIterator<Item = PointRecord>) -> io::Result<()> {
    writeln!(out, "t,x,y,z,sensor")?;
    for r in records {
        writeln!(out, "{:?},{:?},{:?},{:?},{}", r.t, r.x, r.y, r.z, r.sensor)?;
    }
    out.flush()
}

/// Writes a point file, choosing the format by extension.
pub fn write_points(path: impl AsRef<Path>, records: impl IntoIterator<Item = PointRecord>) -> io::Result<()> {
    let path = path.as_ref();
    let out = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_csv(out, records)
    } else {
        write_binary(out, records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<PointRecord> {
        vec![
            PointRecord { t: 0.1, x: 1.5, y: -2.25, z: 0.1, sensor: 0 },
            PointRecord { t: 0.1, x: f32::MIN_POSITIVE, y: 3.0e7, z: -0.0, sensor: 1 },
            PointRecord { t: 0.100_000_000_000_000_01, x: 1.0 / 3.0, y: 2.0, z: 3.0, sensor: 0 },
        ]
    }

    fn binary(records: &[PointRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_binary(&mut buf, records.iter().copied()).unwrap();
        buf
    }

    #[test]
    fn binary_layout() {
        let buf = binary(&sample()[..1]);
        assert_eq!(buf.len(), HEADER_LEN as usize + RECORD_LEN);
        assert_eq!(&buf[..8], b"CTLOPTS\0");
        assert_eq!(&buf[8..12], &[1, 0, 0, 0]);
        assert_eq!(&buf[12..20], &0.1f64.to_le_bytes());
        assert_eq!(&buf[20..24], &1.5f32.to_le_bytes());
        assert_eq!(&buf[33..36], &[0, 0, 0]);
    }

    #[test]
    fn binary_and_csv_round_trip_bit_exactly() {
        let records = sample();
        let back: Vec<_> = BinaryReader::new(&binary(&records)[..]).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, records);
        let mut text = Vec::new();
        write_csv(&mut text, records.iter().copied()).unwrap();
        let back: Vec<_> = CsvReader::new(&text[..]).collect::<Result<_, _>>().unwrap();
        for (a, b) in back.iter().zip(&records) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!([a.x.to_bits(), a.y.to_bits(), a.z.to_bits()], [b.x.to_bits(), b.y.to_bits(), b.z.to_bits()]);
        }
        assert_eq!(back.len(), records.len());
    }

    #[test]
    fn empty_payload_is_an_empty_stream() {
        assert_eq!(BinaryReader::new(&binary(&[])[..]).unwrap().count(), 0);
        assert_eq!(CsvReader::new(&b"t,x,y,z,sensor\n"[..]).count(), 0);
    }

    #[test]
    fn corrupt_records_report_their_offset() {
        let mut buf = binary(&sample());
        // Third record's t becomes NaN.
        let third = HEADER_LEN as usize + 2 * RECORD_LEN;
        buf[third..third + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        let out: Vec<_> = BinaryReader::new(&buf[..]).unwrap().collect();
        assert_eq!(out.len(), 3);
        assert!(matches!(out[2], Err(PointsError::NonFinite(Position::Byte(60)))));

        let buf = binary(&sample());
        let out: Vec<_> = BinaryReader::new(&buf[..buf.len() - 5]).unwrap().collect();
        assert!(matches!(out[2], Err(PointsError::Truncated(Position::Byte(60)))));
        assert!(out[2].as_ref().unwrap_err().to_string().contains("byte offset 60"));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(BinaryReader::new(&b"CTLOPTX\0\x01\0\0\0"[..]), Err(PointsError::BadMagic)));
        assert!(matches!(BinaryReader::new(&b"CTL"[..]), Err(PointsError::BadMagic)));
        assert!(matches!(BinaryReader::new(&b"CTLOPTS\0\x02\0\0\0"[..]), Err(PointsError::Version(2))));
        assert!(matches!(BinaryReader::new(&b"CTLOPTS\0\x01"[..]), Err(PointsError::Truncated(_))));
    }

    #[test]
    fn per_sensor_regression_is_an_error() {
        let mut records = sample();
        // Sensor 1 at an earlier time than sensor 0 is fine.
        records.push(PointRecord { t: 0.05, sensor: 1, ..records[0] });
        let out: Vec<_> = BinaryReader::new(&binary(&records)[..]).unwrap().collect();
        assert!(matches!(out[3], Err(PointsError::Regression { sensor: 1, at: Position::Byte(84), .. })));
        records.truncate(3);
        records.insert(2, PointRecord { t: 0.2, sensor: 2, ..records[0] });
        assert!(BinaryReader::new(&binary(&records)[..]).unwrap().all(|r| r.is_ok()));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "t,x,y,z,sensor\n0.0,1,2,3,0\n# note\n0.1,1,2,oops,0\n";
        let out: Vec<_> = CsvReader::new(text.as_bytes()).collect();
        assert_eq!(out.len(), 2);
        let err = out[1].as_ref().unwrap_err();
        assert!(matches!(err, PointsError::Malformed { at: Position::Line(4), .. }), "{err}");
        let out: Vec<_> = CsvReader::new(&b"0.0,1,2,3\n"[..]).collect();
        assert!(matches!(out[0], Err(PointsError::Malformed { at: Position::Line(1), .. })));
        let out: Vec<_> = CsvReader::new(&b"0.0,1,2,3,0\n0.0,inf,2,3,0\n"[..]).collect();
        assert!(matches!(out[1], Err(PointsError::NonFinite(Position::Line(2)))));
    }

    #[test]
    fn measurement_conversion() {
        let m = Measurement::new(Vec3::new(1.0, 2.0, 3.0), 0.5, 3);
        let r = PointRecord::from_measurement(&m).unwrap();
        assert_eq!(r.measurement(), m);
        assert!(matches!(PointRecord::from_measurement(&Measurement::new(m.p, 0.0, 300)), Err(PointsError::SensorId(300))));
    }
}
