//! Binary containers for recordings and windowed recordings.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, a TOML header
//! of that many bytes, then little-endian `f32` samples (channel-major for
//! recordings, `[window][channel][sample]` for windows).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, Recording, Subject, WindowedRecording};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORDING_MAGIC: &[u8; 8] = b"EEGREC01";
pub const WINDOWS_MAGIC: &[u8; 8] = b"EEGWIN01";
const PREFIX: usize = 12;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingHeader {
    id: String,
    sample_rate: f64,
    num_samples: usize,
    channel_names: Vec<String>,
    label: Option<Label>,
    #[serde(default)]
    subject: Subject,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowsHeader {
    id: String,
    stride: usize,
    shape: [usize; 3],
    label: Option<Label>,
    #[serde(default)]
    subject: Subject,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn encode(magic: &[u8; 8], header: &str, payload: impl Iterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX + header.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Split a container into its header text and payload floats.
fn decode<'a, H: Deserialize<'a>>(magic: &[u8; 8], bytes: &'a [u8], expected: impl Fn(&H) -> usize) -> Result<(H, Vec<f32>)> {
    if bytes.len() < PREFIX {
        return Err(parse_err(bytes.len(), "file shorter than the 12-byte prefix"));
    }
    if &bytes[..8] != magic {
        return Err(parse_err(0, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = PREFIX + hlen;
    if bytes.len() < body {
        return Err(parse_err(8, format!("header length {hlen} runs past end of file ({} bytes)", bytes.len())));
    }
    let text = std::str::from_utf8(&bytes[PREFIX..body])
        .map_err(|e| parse_err(PREFIX + e.valid_up_to(), "header is not UTF-8"))?;
    let header: H = toml::from_str(text).map_err(|e| {
        let at = e.span().map_or(0, |s| s.start);
        parse_err(PREFIX + at, format!("malformed header: {}", e.message()))
    })?;
    let count = expected(&header);
    let payload = &bytes[body..];
    if payload.len() != count * 4 {
        return Err(parse_err(
            body,
            format!("payload holds {} bytes, header implies {count} f32 values ({} bytes)", payload.len(), count * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, data))
}

fn header_text<T: Serialize>(h: &T) -> Result<String> {
    toml::to_string(h).map_err(|e| Error::Contract(format!("header serialization failed: {e}")))
}

pub fn encode_recording(rec: &Recording) -> Result<Vec<u8>> {
    rec.validate()?;
    let header = header_text(&RecordingHeader {
        id: rec.id.clone(),
        sample_rate: rec.sample_rate,
        num_samples: rec.num_samples(),
        channel_names: rec.channel_names.clone(),
        label: rec.label,
        subject: rec.subject.clone(),
    })?;
    Ok(encode(RECORDING_MAGIC, &header, rec.samples.iter().flatten().copied()))
}

pub fn decode_recording(bytes: &[u8]) -> Result<Recording> {
    let (h, data): (RecordingHeader, _) = decode(RECORDING_MAGIC, bytes, |h: &RecordingHeader| {
        h.channel_names.len() * h.num_samples
    })?;
    let samples = if h.num_samples == 0 {
        vec![Vec::new(); h.channel_names.len()]
    } else {
        data.chunks(h.num_samples).map(<[f32]>::to_vec).collect()
    };
    let rec = Recording {
        id: h.id,
        channel_names: h.channel_names,
        sample_rate: h.sample_rate,
        samples,
        label: h.label,
        subject: h.subject,
    };
    rec.validate().map_err(|e| parse_err(PREFIX, e.to_string()))?;
    Ok(rec)
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    Ok(fs::write(path, encode_recording(rec)?)?)
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    decode_recording(&fs::read(path)?)
}

pub fn write_windows(path: &Path, w: &WindowedRecording) -> Result<()> {
    let shape = w.windows.shape();
    let header = header_text(&WindowsHeader {
        id: w.id.clone(),
        stride: w.stride,
        shape: [shape[0], shape[1], shape[2]],
        label: w.label,
        subject: w.subject.clone(),
    })?;
    Ok(fs::write(path, encode(WINDOWS_MAGIC, &header, w.windows.data().iter().copied()))?)
}

pub fn read_windows(path: &Path) -> Result<WindowedRecording> {
    let bytes = fs::read(path)?;
    let (h, data): (WindowsHeader, _) = decode(WINDOWS_MAGIC, &bytes, |h: &WindowsHeader| h.shape.iter().product())?;
    Ok(WindowedRecording {
        id: h.id,
        windows: Tensor::new(h.shape.to_vec(), data).map_err(|e| parse_err(PREFIX, e.to_string()))?,
        stride: h.stride,
        label: h.label,
        subject: h.subject,
    })
}

/// One channel per column, names in the header row, samples at `sample_rate`.
pub fn import_csv(path: &Path, sample_rate: f64) -> Result<Recording> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut samples = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
        for (col, field) in record.iter().enumerate() {
            let v: f32 = field.parse().map_err(|_| {
                Error::Ingest(format!("{}: row {}, column {}: not a number: {field:?}", path.display(), row + 2, col + 1))
            })?;
            samples[col].push(v);
        }
    }
    let id = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    let rec = Recording {
        id,
        channel_names: names,
        sample_rate,
        samples,
        label: None,
        subject: Subject::default(),
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Sex;

    fn rec() -> Recording {
        Recording {
            id: "rec-1".into(),
            channel_names: vec!["Fp1".into(), "Fp2".into(), "Cz".into()],
            sample_rate: 256.0,
            samples: (0..3)
                .map(|c| (0..50).map(|i| (i as f32 * 0.1 + c as f32).sin() * 1e3 + f32::EPSILON).collect())
                .collect(),
            label: Some(Label::Abnormal),
            subject: Subject {
                id: Some("s9".into()),
                age: Some(61.0),
                sex: Some(Sex::Female),
            },
        }
    }

    #[test]
    fn recording_round_trip_is_bit_exact() {
        let r = rec();
        let back = decode_recording(&encode_recording(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        for (a, b) in back.samples.iter().flatten().zip(r.samples.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode_recording(&rec()).unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
        match decode_recording(&bytes[..bytes.len() - 4]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12 + hlen),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_header() {
        let mut bytes = encode_recording(&rec()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_recording(&bytes), Err(Error::Parse { offset: 0, .. })));

        let mut bytes = encode_recording(&rec()).unwrap();
        bytes[12] = b'[';
        assert!(matches!(decode_recording(&bytes), Err(Error::Parse { offset, .. }) if offset >= 12));

        let bytes = encode_recording(&rec()).unwrap();
        assert!(matches!(decode_recording(&bytes[..10]), Err(Error::Parse { .. })));
    }

    #[test]
    fn windows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.eegwin");
        let w = WindowedRecording {
            id: "x".into(),
            windows: Tensor::from_fn([3, 2, 5], |i| i as f32 * 0.5),
            stride: 250,
            label: Some(Label::Normal),
            subject: Subject::default(),
        };
        write_windows(&path, &w).unwrap();
        assert_eq!(read_windows(&path).unwrap(), w);
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.csv");
        fs::write(&path, "Fp1, Fp2\n1.0, 2.0\n3.5, -4\n").unwrap();
        let r = import_csv(&path, 100.0).unwrap();
        assert_eq!(r.id, "session");
        assert_eq!(r.channel_names, vec!["Fp1", "Fp2"]);
        assert_eq!(r.samples, vec![vec![1.0, 3.5], vec![2.0, -4.0]]);

        fs::write(&path, "a,b\n1,x\n").unwrap();
        assert!(matches!(import_csv(&path, 100.0), Err(Error::Ingest(_))));
    }
}
