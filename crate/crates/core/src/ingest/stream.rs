//! Activation-stream interchange format.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic      16 bytes   "FSCOPE-ACT-v1\0\0\0"
//! hdr_len    u32        length of the JSON header in bytes
//! header     hdr_len    {"C": <classes>, "layers": [{"layer_index", "neuron_count"}, ...]}
//! records    28 bytes each:
//!            u16 layer_index, u32 neuron_id, u32 image_id, u32 class_id,
//!            f32 score, u32 loc_row, u32 loc_col, u16 reserved (= 0)
//! ```
//!
//! The CSV variant carries the same record columns with a header row; the
//! class count and layer table come from the caller.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACT_MAGIC: &[u8; 16] = b"FSCOPE-ACT-v1\0\0\0";
pub const RECORD_LEN: usize = 28;

/// One (layer, neuron, image) observation: the spatial maximum of the
/// neuron's feature map and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub layer_index: u16,
    pub neuron_id: u32,
    pub image_id: u32,
    pub class_id: u32,
    pub score: f32,
    pub loc_row: u32,
    pub loc_col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDecl {
    pub layer_index: u16,
    pub neuron_count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    #[serde(rename = "C")]
    pub classes: u32,
    pub layers: Vec<LayerDecl>,
}

impl StreamHeader {
    pub fn neuron_count(&self, layer_index: u16) -> Option<u32> {
        self.layers
            .iter()
            .find(|l| l.layer_index == layer_index)
            .map(|l| l.neuron_count)
    }

    fn check(&self, rec: &ActivationRecord) -> std::result::Result<(), String> {
        if !rec.score.is_finite() {
            return Err(format!("non-finite score {}", rec.score));
        }
        let neurons = self
            .neuron_count(rec.layer_index)
            .ok_or_else(|| format!("unknown layer {}", rec.layer_index))?;
        if rec.neuron_id >= neurons {
            return Err(format!(
                "neuron_id {} out of range for layer {} ({} neurons)",
                rec.neuron_id, rec.layer_index, neurons
            ));
        }
        if rec.class_id >= self.classes {
            return Err(format!(
                "class_id {} out of range ({} classes)",
                rec.class_id, self.classes
            ));
        }
        Ok(())
    }
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn io_err(offset: u64, e: io::Error) -> Error {
    Error::parse(offset, format!("read failed: {e}"))
}

/// Streaming reader over the binary format. Yields records in stream order
/// and stops at the first malformed record.
pub struct ActivationReader<R> {
    reader: R,
    header: StreamHeader,
    offset: u64,
    done: bool,
}

impl<R: Read> ActivationReader<R> {
    /// Reads magic and header. A zero-byte source is an empty stream with a
    /// default header.
    pub fn new(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 16];
        let n = read_up_to(&mut reader, &mut magic).map_err(|e| io_err(0, e))?;
        if n == 0 {
            return Ok(Self {
                reader,
                header: StreamHeader::default(),
                offset: 0,
                done: true,
            });
        }
        if n < magic.len() || &magic != ACT_MAGIC {
            return Err(Error::parse(0, "bad magic, not an activation stream"));
        }
        let mut len = [0u8; 4];
        if read_up_to(&mut reader, &mut len).map_err(|e| io_err(16, e))? < 4 {
            return Err(Error::parse(16, "truncated header length"));
        }
        let len = u32::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        if read_up_to(&mut reader, &mut json).map_err(|e| io_err(20, e))? < len {
            return Err(Error::parse(20, "truncated JSON header"));
        }
        let header: StreamHeader = serde_json::from_slice(&json)
            .map_err(|e| Error::parse(20, format!("invalid JSON header: {e}")))?;
        Ok(Self {
            reader,
            header,
            offset: 20 + len as u64,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Option<ActivationRecord>> {
        let at = self.offset;
        let mut buf = [0u8; RECORD_LEN];
        let n = read_up_to(&mut self.reader, &mut buf).map_err(|e| io_err(at, e))?;
        if n == 0 {
            return Ok(None);
        }
        if n < RECORD_LEN {
            return Err(Error::parse(
                at,
                format!("truncated record ({n} of {RECORD_LEN} bytes)"),
            ));
        }
        let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
        let rec = ActivationRecord {
            layer_index: u16::from_le_bytes([buf[0], buf[1]]),
            neuron_id: u32_at(2),
            image_id: u32_at(6),
            class_id: u32_at(10),
            score: f32::from_le_bytes(buf[14..18].try_into().unwrap()),
            loc_row: u32_at(18),
            loc_col: u32_at(22),
        };
        let reserved = u16::from_le_bytes([buf[26], buf[27]]);
        if reserved != 0 {
            return Err(Error::parse(
                at,
                format!("reserved field is {reserved}, expected 0"),
            ));
        }
        self.header.check(&rec).map_err(|m| Error::parse(at, m))?;
        self.offset += RECORD_LEN as u64;
        Ok(Some(rec))
    }
}

impl<R: Read> Iterator for ActivationReader<R> {
    type Item = Result<ActivationRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Parses a whole binary stream into memory.
pub fn parse_activation_stream<R: Read>(
    source: R,
) -> Result<(StreamHeader, Vec<ActivationRecord>)> {
    let mut reader = ActivationReader::new(source)?;
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((reader.header, records))
}

/// Encodes one record in the fixed 28-byte layout.
pub fn encode_record(rec: &ActivationRecord) -> [u8; RECORD_LEN] {
    let mut buf = [0u8; RECORD_LEN];
    buf[0..2].copy_from_slice(&rec.layer_index.to_le_bytes());
    buf[2..6].copy_from_slice(&rec.neuron_id.to_le_bytes());
    buf[6..10].copy_from_slice(&rec.image_id.to_le_bytes());
    buf[10..14].copy_from_slice(&rec.class_id.to_le_bytes());
    buf[14..18].copy_from_slice(&rec.score.to_le_bytes());
    buf[18..22].copy_from_slice(&rec.loc_row.to_le_bytes());
    buf[22..26].copy_from_slice(&rec.loc_col.to_le_bytes());
    buf
}

pub fn write_stream_header<W: Write>(mut w: W, header: &StreamHeader) -> io::Result<()> {
    let json = serde_json::to_vec(header).map_err(io::Error::other)?;
    w.write_all(ACT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)
}

pub fn write_activation_stream<W: Write>(
    mut w: W,
    header: &StreamHeader,
    records: &[ActivationRecord],
) -> io::Result<()> {
    write_stream_header(&mut w, header)?;
    for rec in records {
        w.write_all(&encode_record(rec))?;
    }
    Ok(())
}

/// Parses the CSV debugging variant (`layer_index,neuron_id,image_id,
/// class_id,score,loc_row,loc_col`). Errors carry the byte offset of the
/// offending line.
pub fn parse_activation_csv<R: Read>(
    source: R,
    header: &StreamHeader,
) -> Result<Vec<ActivationRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut raw = csv::StringRecord::new();
    let mut out = Vec::new();
    loop {
        let more = reader.read_record(&mut raw).map_err(|e| {
            let offset = e.position().map(|p| p.byte()).unwrap_or(0);
            Error::parse(offset, e.to_string())
        })?;
        if !more {
            break;
        }
        let offset = raw.position().map(|p| p.byte()).unwrap_or(0);
        let rec: ActivationRecord = raw
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(offset, e.to_string()))?;
        header.check(&rec).map_err(|m| Error::parse(offset, m))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_activation_csv<W: Write>(w: W, records: &[ActivationRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for rec in records {
        writer.serialize(rec)?;
    }
    writer.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Groups records by layer, keeping stream order inside each group.
pub fn group_by_layer(records: &[ActivationRecord]) -> BTreeMap<u16, Vec<ActivationRecord>> {
    let mut out: BTreeMap<u16, Vec<ActivationRecord>> = BTreeMap::new();
    for rec in records {
        out.entry(rec.layer_index).or_default().push(*rec);
    }
    out
}
