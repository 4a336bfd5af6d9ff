//! BFEEG1 / BFIMF1 binary files and the CSV recording import path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EegError, EegSequence, ImageFeatureTable, Result, DEFAULT_SAMPLE_RATE_HZ};
use crate::codec::{ByteReader, ByteWriter, DecodeError};

pub const EEG_MAGIC: &[u8; 6] = b"BFEEG1";
pub const IMAGE_FEATURE_MAGIC: &[u8; 6] = b"BFIMF1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EegFileHeader {
    pub records: u32,
    pub channels: u32,
    pub samples_per_record: u32,
    pub sample_rate_hz: f32,
}

fn io_err(path: &Path, source: std::io::Error) -> EegError {
    EegError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn header_err(path: &Path, e: impl std::fmt::Display) -> EegError {
    EegError::Header {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn record_err(path: &Path, record: usize, e: impl std::fmt::Display) -> EegError {
    EegError::Record {
        path: path.to_path_buf(),
        record,
        msg: e.to_string(),
    }
}

/// Reads a recording file, dispatching on the binary magic; anything else is
/// parsed as CSV.
pub fn read_eeg_file(path: &Path) -> Result<(EegFileHeader, Vec<EegSequence>)> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    if buf.starts_with(EEG_MAGIC) {
        decode_eeg(path, &buf)
    } else {
        let text = String::from_utf8(buf).map_err(|_| {
            header_err(path, "neither BFEEG1 binary nor UTF-8 CSV")
        })?;
        parse_eeg_csv(path, &text)
    }
}

fn decode_eeg(path: &Path, buf: &[u8]) -> Result<(EegFileHeader, Vec<EegSequence>)> {
    let mut r = ByteReader::new(buf);
    let header = (|| -> std::result::Result<EegFileHeader, DecodeError> {
        r.expect_magic(EEG_MAGIC)?;
        Ok(EegFileHeader {
            records: r.u32()?,
            channels: r.u32()?,
            samples_per_record: r.u32()?,
            sample_rate_hz: r.f32()?,
        })
    })()
    .map_err(|e| header_err(path, e))?;
    if header.channels == 0 || header.samples_per_record == 0 {
        return Err(header_err(path, "channels and samples_per_record must be positive"));
    }
    if !(header.sample_rate_hz.is_finite() && header.sample_rate_hz > 0.0) {
        return Err(header_err(
            path,
            format!("sample rate {} is not positive", header.sample_rate_hz),
        ));
    }
    let per_record = header.channels as usize * header.samples_per_record as usize;
    let mut out = Vec::with_capacity(header.records as usize);
    for i in 0..header.records as usize {
        let rec = (|| -> std::result::Result<(u32, u32, u32, Vec<f64>), DecodeError> {
            let subject = r.u32()?;
            let image = r.u32()?;
            let class = r.u32()?;
            let raw = r.bytes(per_record * 4)?;
            let samples = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok((subject, image, class, samples))
        })()
        .map_err(|e| record_err(path, i, e))?;
        let seq = EegSequence::new(
            rec.0,
            rec.1,
            rec.2,
            header.sample_rate_hz as f64,
            header.channels as usize,
            rec.3,
        )
        .map_err(|e| record_err(path, i, e))?;
        out.push(seq);
    }
    if r.remaining() != 0 {
        return Err(header_err(
            path,
            format!(
                "{} trailing bytes after {} records",
                r.remaining(),
                header.records
            ),
        ));
    }
    Ok((header, out))
}

/// Writes sequences as BFEEG1. All sequences must share shape and sample rate.
pub fn write_eeg_file(path: &Path, sequences: &[EegSequence]) -> Result<()> {
    let (channels, len, rate) = common_shape(path, sequences)?;
    let mut w = ByteWriter::new();
    w.bytes(EEG_MAGIC)
        .usize32(sequences.len())
        .usize32(channels)
        .usize32(len)
        .f32(rate as f32);
    for s in sequences {
        w.u32(s.subject_id).u32(s.image_id).u32(s.class_id);
        for v in s.samples() {
            w.f32(*v as f32);
        }
    }
    fs::write(path, w.into_inner()).map_err(|e| io_err(path, e))
}

fn common_shape(path: &Path, sequences: &[EegSequence]) -> Result<(usize, usize, f64)> {
    let first = sequences.first().ok_or_else(|| EegError::NoRecords {
        path: path.to_path_buf(),
    })?;
    let shape = (first.channels(), first.len(), first.sample_rate_hz);
    for (i, s) in sequences.iter().enumerate() {
        if (s.channels(), s.len()) != (shape.0, shape.1) || s.sample_rate_hz != shape.2 {
            return Err(EegError::Dimension {
                path: path.to_path_buf(),
                msg: format!("record {i} differs in shape or sample rate from record 0"),
            });
        }
    }
    Ok(shape)
}

/// Parses the CSV import format: optional `# sample_rate_hz = R` comment, an
/// optional header row, then one row per (record, channel):
/// `subject_id,image_id,class_id,channel,s0,s1,...`.
pub fn read_eeg_csv(path: &Path) -> Result<(EegFileHeader, Vec<EegSequence>)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_eeg_csv(path, &text)
}

fn parse_eeg_csv(path: &Path, text: &str) -> Result<(EegFileHeader, Vec<EegSequence>)> {
    let mut rate = DEFAULT_SAMPLE_RATE_HZ as f32;
    let mut records: Vec<((u32, u32, u32), Vec<Vec<f64>>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "sample_rate_hz" {
                    rate = v
                        .trim()
                        .parse()
                        .map_err(|_| header_err(path, format!("line {}: bad sample rate", lineno + 1)))?;
                }
            }
            continue;
        }
        if line.starts_with("subject_id") {
            continue;
        }
        let record_no = records.len();
        let bad = |msg: String| record_err(path, record_no, format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 5 {
            return Err(bad(format!("expected at least 5 fields, got {}", fields.len())));
        }
        let int = |i: usize| -> Result<u32> {
            fields[i]
                .parse::<u32>()
                .map_err(|_| bad(format!("field {} is not an unsigned integer", i + 1)))
        };
        let key = (int(0)?, int(1)?, int(2)?);
        let channel = int(3)? as usize;
        let values = fields[4..]
            .iter()
            .map(|f| {
                f.parse::<f32>()
                    .map(f64::from)
                    .map_err(|_| bad(format!("bad sample value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match records.last_mut() {
            Some((k, rows)) if channel != 0 => {
                if *k != key || rows.len() != channel {
                    return Err(record_err(
                        path,
                        record_no - 1,
                        format!(
                            "line {}: channel {channel} out of order for subject {} image {}",
                            lineno + 1,
                            key.0,
                            key.1
                        ),
                    ));
                }
                rows.push(values);
            }
            _ if channel == 0 => records.push((key, vec![values])),
            _ => return Err(bad("first row of a record must be channel 0".into())),
        }
    }
    let channels = records.first().map_or(0, |r| r.1.len());
    let len = records.first().map_or(0, |r| r.1[0].len());
    let mut out = Vec::with_capacity(records.len());
    for (i, ((subject, image, class), rows)) in records.into_iter().enumerate() {
        if rows.len() != channels || rows.iter().any(|r| r.len() != len) {
            return Err(EegError::Dimension {
                path: path.to_path_buf(),
                msg: format!("record {i} has a different shape from record 0"),
            });
        }
        out.push(
            EegSequence::from_channels(subject, image, class, rate as f64, &rows)
                .map_err(|e| record_err(path, i, e))?,
        );
    }
    let header = EegFileHeader {
        records: out.len() as u32,
        channels: channels as u32,
        samples_per_record: len as u32,
        sample_rate_hz: rate,
    };
    Ok((header, out))
}

/// Writes the CSV form. Values are rounded to f32, matching the binary format,
/// and printed in shortest round-trip notation so the import is lossless.
pub fn write_eeg_csv(path: &Path, sequences: &[EegSequence]) -> Result<()> {
    let (_, _, rate) = common_shape(path, sequences)?;
    let mut out = String::new();
    let _ = writeln!(out, "# sample_rate_hz = {}", rate as f32);
    out.push_str("subject_id,image_id,class_id,channel,samples\n");
    for s in sequences {
        for c in 0..s.channels() {
            let _ = write!(out, "{},{},{},{}", s.subject_id, s.image_id, s.class_id, c);
            for v in s.channel(c) {
                let _ = write!(out, ",{}", *v as f32);
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a BFIMF1 table. An optional trailer (u32 length + UTF-8) carries the
/// source tag.
pub fn read_image_features(path: &Path) -> Result<ImageFeatureTable> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = ByteReader::new(&buf);
    let (count, dim) = (|| -> std::result::Result<(usize, usize), DecodeError> {
        r.expect_magic(IMAGE_FEATURE_MAGIC)?;
        Ok((r.usize32()?, r.usize32()?))
    })()
    .map_err(|e| header_err(path, e))?;
    if dim == 0 {
        return Err(header_err(path, "dimension must be positive"));
    }
    let mut vectors = BTreeMap::new();
    for i in 0..count {
        let (id, v) = (|| -> std::result::Result<(u32, Vec<f64>), DecodeError> {
            let id = r.u32()?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(r.f32()? as f64);
            }
            Ok((id, v))
        })()
        .map_err(|e| record_err(path, i, e))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(record_err(path, i, format!("image {id}: non-finite value")));
        }
        if vectors.insert(id, v).is_some() {
            return Err(record_err(path, i, format!("duplicate image id {id}")));
        }
    }
    let tag = if r.remaining() > 0 {
        r.string().map_err(|e| header_err(path, format!("source tag: {e}")))?
    } else {
        String::new()
    };
    if r.remaining() != 0 {
        return Err(header_err(path, "trailing bytes after source tag"));
    }
    ImageFeatureTable::new(dim, vectors, tag)
}

pub fn write_image_features(path: &Path, table: &ImageFeatureTable) -> Result<()> {
    let mut w = ByteWriter::new();
    w.bytes(IMAGE_FEATURE_MAGIC)
        .usize32(table.len())
        .usize32(table.dim());
    for (id, v) in table.iter() {
        w.u32(id);
        for x in v {
            w.f32(*x as f32);
        }
    }
    if !table.source_tag.is_empty() {
        w.string(&table.source_tag);
    }
    fs::write(path, w.into_inner()).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_sequences() -> Vec<EegSequence> {
        (0..3)
            .map(|i| {
                let samples = (0..2 * 5).map(|k| (k as f64 * 0.37 + i as f64).sin() * 10.0).collect();
                EegSequence::new(i, 10 + i, i % 2, 250.0, 2, samples).unwrap()
            })
            .collect()
    }

    fn as_f32(seqs: &[EegSequence]) -> Vec<Vec<f32>> {
        seqs.iter()
            .map(|s| s.samples().iter().map(|v| *v as f32).collect())
            .collect()
    }

    #[test]
    fn binary_and_csv_agree() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = sample_sequences();
        let bin = dir.path().join("a.bfeeg");
        let csv = dir.path().join("a.csv");
        write_eeg_file(&bin, &seqs).unwrap();
        write_eeg_csv(&csv, &seqs).unwrap();
        let (hb, b) = read_eeg_file(&bin).unwrap();
        let (hc, c) = read_eeg_file(&csv).unwrap();
        assert_eq!(hb, hc);
        assert_eq!(b, c);
        assert_eq!(as_f32(&b), as_f32(&seqs));
    }

    #[test]
    fn truncated_record_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bfeeg");
        write_eeg_file(&p, &sample_sequences()).unwrap();
        let mut buf = fs::read(&p).unwrap();
        buf.truncate(buf.len() - 3);
        fs::write(&p, buf).unwrap();
        match read_eeg_file(&p) {
            Err(EegError::Record { record, .. }) => assert_eq!(record, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_a_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bfimf");
        fs::write(&p, b"BFIMF0\0\0\0\0").unwrap();
        assert!(matches!(read_image_features(&p), Err(EegError::Header { .. })));
    }

    #[test]
    fn feature_table_keeps_source_tag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bfimf");
        let mut v = BTreeMap::new();
        v.insert(3, vec![0.5, -1.0]);
        v.insert(1, vec![2.0, 0.25]);
        let t = ImageFeatureTable::new(2, v, "eeg:average").unwrap();
        write_image_features(&p, &t).unwrap();
        assert_eq!(read_image_features(&p).unwrap(), t);
    }

    #[test]
    fn csv_rejects_out_of_order_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "0,0,0,0,1,2\n0,0,0,2,1,2\n").unwrap();
        assert!(matches!(read_eeg_file(&p), Err(EegError::Record { record: 0, .. })));
    }
}
