//! Neuron-by-class co-occurrence ("CoF") matrices.
//!
//! Entry (n, c) counts how many of neuron n's top-K images belong to class c.
//! Rows are stored dense; at 512 x 1000 per layer that is small.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RankedList;

pub const COF_MAGIC: &[u8; 16] = b"FSCOPE-COF-v1\0\0\0";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CofMatrix {
    pub layer_index: u16,
    pub n_neurons: usize,
    pub n_classes: usize,
    counts: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CofHeader {
    layer_index: u16,
    n_neurons: usize,
    #[serde(rename = "C")]
    n_classes: usize,
}

impl CofMatrix {
    pub fn from_rows(layer_index: u16, rows: &[Vec<u32>], n_classes: usize) -> Result<Self> {
        let mut counts = Vec::with_capacity(rows.len() * n_classes);
        for (n, row) in rows.iter().enumerate() {
            if row.len() != n_classes {
                return Err(Error::data(format!(
                    "row {n} has {} columns, expected {n_classes}",
                    row.len()
                )));
            }
            counts.extend_from_slice(row);
        }
        Ok(Self {
            layer_index,
            n_neurons: rows.len(),
            n_classes,
            counts,
        })
    }

    pub fn get(&self, neuron: usize, class: usize) -> u32 {
        self.counts[neuron * self.n_classes + class]
    }

    pub fn row_slice(&self, neuron: usize) -> &[u32] {
        &self.counts[neuron * self.n_classes..(neuron + 1) * self.n_classes]
    }

    /// Copy of one neuron's row.
    pub fn row(&self, neuron_id: usize) -> Result<Vec<u32>> {
        if neuron_id >= self.n_neurons {
            return Err(Error::usage(format!(
                "neuron {neuron_id} out of range for layer {} ({} neurons)",
                self.layer_index, self.n_neurons
            )));
        }
        Ok(self.row_slice(neuron_id).to_vec())
    }

    pub fn row_f64(&self, neuron: usize) -> Vec<f64> {
        self.row_slice(neuron).iter().map(|&c| c as f64).collect()
    }

    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.n_neurons).map(|n| self.row_f64(n)).collect()
    }

    pub fn row_sum(&self, neuron: usize) -> u64 {
        self.row_slice(neuron).iter().map(|&c| c as u64).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Sparse CSV `layer,neuron,class,count`; zero cells omitted.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["layer", "neuron", "class", "count"])?;
        for n in 0..self.n_neurons {
            for (c, &count) in self.row_slice(n).iter().enumerate() {
                if count > 0 {
                    writer.write_record([
                        self.layer_index.to_string(),
                        n.to_string(),
                        c.to_string(),
                        count.to_string(),
                    ])?;
                }
            }
        }
        writer.flush().map_err(|e| Error::io("<cof csv>", e))?;
        Ok(())
    }

    /// Dense binary export: 16-byte magic, u32 JSON header length, JSON
    /// header `{layer_index, n_neurons, C}`, then u32 LE counts row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&CofHeader {
            layer_index: self.layer_index,
            n_neurons: self.n_neurons,
            n_classes: self.n_classes,
        })?;
        let io = |e| Error::io("<cof binary>", e);
        w.write_all(COF_MAGIC).map_err(io)?;
        w.write_all(&(header.len() as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for &c in &self.counts {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("<cof binary>", e))?;
        if bytes.len() < 20 || &bytes[..16] != COF_MAGIC {
            return Err(Error::parse(0, "bad magic, not a CoF matrix"));
        }
        let len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let body = 20 + len;
        if bytes.len() < body {
            return Err(Error::parse(20, "truncated JSON header"));
        }
        let header: CofHeader = serde_json::from_slice(&bytes[20..body])
            .map_err(|e| Error::parse(20, format!("invalid JSON header: {e}")))?;
        let cells = header.n_neurons * header.n_classes;
        if bytes.len() != body + 4 * cells {
            return Err(Error::parse(
                body as u64,
                format!(
                    "expected {cells} counts, found {} bytes",
                    bytes.len() - body
                ),
            ));
        }
        let counts = bytes[body..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self {
            layer_index: header.layer_index,
            n_neurons: header.n_neurons,
            n_classes: header.n_classes,
            counts,
        })
    }
}

/// Counts classes over each neuron's ranked list. Neurons without a list
/// keep an all-zero row.
pub fn build_cof<'a, I>(
    layer_index: u16,
    lists: I,
    n_neurons: usize,
    n_classes: usize,
) -> Result<CofMatrix>
where
    I: IntoIterator<Item = &'a RankedList>,
{
    let mut counts = vec![0u32; n_neurons * n_classes];
    for list in lists {
        let n = list.neuron_id as usize;
        if list.layer_index != layer_index || n >= n_neurons {
            return Err(Error::data(format!(
                "ranked list for layer {} neuron {} does not belong to layer {} with {} neurons",
                list.layer_index, list.neuron_id, layer_index, n_neurons
            )));
        }
        for (rank, entry) in list.entries.iter().enumerate() {
            let c = entry.class_id as usize;
            if c >= n_classes {
                return Err(Error::data(format!(
                    "neuron {n} entry {rank} (image {}): class_id {c} >= {n_classes}",
                    entry.image_id
                )));
            }
            counts[n * n_classes + c] += 1;
        }
    }
    Ok(CofMatrix {
        layer_index,
        n_neurons,
        n_classes,
        counts,
    })
}
