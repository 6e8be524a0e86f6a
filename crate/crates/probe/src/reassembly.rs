use std::collections::BTreeMap;

/// In-order delivery of a CRYPTO stream from possibly overlapping chunks.
#[derive(Debug, Default)]
pub struct Reassembly {
    delivered: u64,
    pending: BTreeMap<u64, Vec<u8>>,
}

impl Reassembly {
    pub fn insert(&mut self, offset: u64, data: &[u8]) {
        let end = offset + data.len() as u64;
        if end <= self.delivered || data.is_empty() {
            return;
        }
        let entry = self.pending.entry(offset).or_default();
        if data.len() > entry.len() {
            *entry = data.to_vec();
        }
    }

    /// Returns the bytes that became contiguous since the last call.
    pub fn read(&mut self) -> Vec<u8> {
        let mut out = Vec::new();
        while let Some((&offset, _)) = self.pending.first_key_value() {
            if offset > self.delivered {
                break;
            }
            let data = self.pending.remove(&offset).expect("present");
            let skip = (self.delivered - offset) as usize;
            if skip < data.len() {
                out.extend_from_slice(&data[skip..]);
                self.delivered += (data.len() - skip) as u64;
            }
        }
        out
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}
