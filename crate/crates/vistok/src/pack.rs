//! Sequence packing: fuse variable-length token sequences into
//! fixed-capacity contexts without changing what a per-sample forward pass
//! would compute. Payloads stay bit-identical and contiguous, and the
//! accompanying attention mask is block-diagonal causal so no token attends
//! across a sample boundary.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One variable-length sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqSample {
    pub id: String,
    pub payload: Vec<i64>,
}

impl SeqSample {
    pub fn new(id: impl Into<String>, payload: Vec<i64>) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::invalid("sample payload must be nonempty"));
        }
        Ok(Self { id: id.into(), payload })
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Placement of one sample inside a context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub offset: usize,
    pub length: usize,
}

/// A filled context: ordered segments, concatenated payload, and a per-token
/// sample ordinal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    pub segments: Vec<Segment>,
    pub payload: Vec<i64>,
    pub segment_ids: Vec<u32>,
    created: usize,
}

impl Context {
    pub fn tokens(&self) -> usize {
        self.payload.len()
    }

    /// Position in creation order within the stream that produced it.
    pub fn creation_index(&self) -> usize {
        self.created
    }
}

/// A set of packed contexts sharing one capacity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatch {
    pub capacity: usize,
    pub contexts: Vec<Context>,
}

impl PackedBatch {
    pub fn packed_tokens(&self) -> usize {
        self.contexts.iter().map(|c| c.tokens()).sum()
    }

    /// Packed tokens over allocated capacity.
    pub fn utilization(&self) -> f64 {
        if self.contexts.is_empty() {
            return 0.0;
        }
        self.packed_tokens() as f64 / (self.contexts.len() * self.capacity) as f64
    }
}

/// A sample that could not be packed because it exceeds the capacity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSample {
    pub id: String,
    pub length: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackPolicy {
    /// Place each arriving sample into the earliest open context with room.
    FirstFit,
    /// Buffer `window` samples, sort them by length descending, then
    /// first-fit; a window of 1 degenerates to plain first-fit.
    FirstFitDecreasing { window: usize },
}

impl PackPolicy {
    /// Parse `first-fit` or `ffd:W`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "first-fit" {
            return Ok(PackPolicy::FirstFit);
        }
        if let Some(w) = s.strip_prefix("ffd:") {
            let window: usize = w
                .parse()
                .map_err(|_| Error::invalid(format!("bad window in policy {s:?}")))?;
            if window == 0 {
                return Err(Error::invalid("policy window must be positive"));
            }
            return Ok(PackPolicy::FirstFitDecreasing { window });
        }
        Err(Error::invalid(format!(
            "unknown policy {s:?}; expected first-fit or ffd:W"
        )))
    }
}

struct OpenContext {
    created: usize,
    remaining: usize,
    segments: Vec<Segment>,
    payload: Vec<i64>,
    segment_ids: Vec<u32>,
}

impl OpenContext {
    fn new(created: usize, capacity: usize) -> Self {
        Self {
            created,
            remaining: capacity,
            segments: Vec::new(),
            payload: Vec::new(),
            segment_ids: Vec::new(),
        }
    }

    fn accept(&mut self, sample: SeqSample) {
        let ordinal = self.segments.len() as u32;
        let offset = self.payload.len();
        self.remaining -= sample.payload.len();
        self.segment_ids
            .extend(std::iter::repeat(ordinal).take(sample.payload.len()));
        self.segments.push(Segment {
            id: sample.id,
            offset,
            length: sample.payload.len(),
        });
        self.payload.extend_from_slice(&sample.payload);
    }

    fn close(self) -> Context {
        Context {
            segments: self.segments,
            payload: self.payload,
            segment_ids: self.segment_ids,
            created: self.created,
        }
    }
}

/// What one `push` produced: contexts that closed, and the sample itself if
/// it was too long to pack.
#[derive(Debug, Default)]
pub struct PackEvent {
    pub closed: Vec<Context>,
    pub rejected: Option<RejectedSample>,
}

/// Streaming packer with a single-writer contract: one instance per stream.
pub struct Packer {
    capacity: usize,
    policy: PackPolicy,
    open: Vec<OpenContext>,
    buffer: Vec<(usize, SeqSample)>,
    arrivals: usize,
    created: usize,
}

impl Packer {
    pub fn new(capacity: usize, policy: PackPolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("capacity must be positive"));
        }
        if let PackPolicy::FirstFitDecreasing { window: 0 } = policy {
            return Err(Error::invalid("policy window must be positive"));
        }
        Ok(Self {
            capacity,
            policy,
            open: Vec::new(),
            buffer: Vec::new(),
            arrivals: 0,
            created: 0,
        })
    }

    pub fn push(&mut self, sample: SeqSample) -> PackEvent {
        if sample.len() > self.capacity {
            return PackEvent {
                closed: Vec::new(),
                rejected: Some(RejectedSample {
                    id: sample.id,
                    length: sample.payload.len(),
                    capacity: self.capacity,
                }),
            };
        }
        match self.policy {
            PackPolicy::FirstFit => {
                let mut closed = Vec::new();
                self.place(sample, &mut closed);
                PackEvent { closed, rejected: None }
            }
            PackPolicy::FirstFitDecreasing { window } => {
                self.arrivals += 1;
                self.buffer.push((self.arrivals, sample));
                let mut closed = Vec::new();
                if self.buffer.len() >= window {
                    self.drain_buffer(&mut closed);
                }
                PackEvent { closed, rejected: None }
            }
        }
    }

    /// Flush the partial buffer and emit every open context, in creation
    /// order.
    pub fn finish(mut self) -> Vec<Context> {
        let mut closed = Vec::new();
        if !self.buffer.is_empty() {
            self.drain_buffer(&mut closed);
        }
        self.open.sort_by_key(|c| c.created);
        closed.extend(self.open.into_iter().map(OpenContext::close));
        closed
    }

    /// First-fit into the currently open contexts; contexts that fill up
    /// close immediately.
    fn place(&mut self, sample: SeqSample, closed: &mut Vec<Context>) {
        let len = sample.len();
        let slot = self.open.iter().position(|c| c.remaining >= len);
        let idx = match slot {
            Some(i) => i,
            None => {
                self.open.push(OpenContext::new(self.created, self.capacity));
                self.created += 1;
                self.open.len() - 1
            }
        };
        self.open[idx].accept(sample);
        if self.open[idx].remaining == 0 {
            closed.push(self.open.remove(idx).close());
        }
    }

    /// Sort the buffered window by length descending (ties by arrival) and
    /// first-fit each sample. After each placement, any open context that
    /// cannot hold even the smallest still-buffered sample is emitted.
    fn drain_buffer(&mut self, closed: &mut Vec<Context>) {
        let mut window = std::mem::take(&mut self.buffer);
        window.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        let mut queue = window.into_iter();
        while let Some((_, sample)) = queue.next() {
            self.place(sample, closed);
            if let Some(min_len) = queue.as_slice().iter().map(|(_, s)| s.len()).min() {
                let mut i = 0;
                while i < self.open.len() {
                    if self.open[i].remaining < min_len {
                        closed.push(self.open.remove(i).close());
                    } else {
                        i += 1;
                    }
                }
            }
        }
    }
}

/// Result of packing a whole stream.
#[derive(Debug)]
pub struct PackOutcome {
    pub batch: PackedBatch,
    pub rejected: Vec<RejectedSample>,
}

/// Pack an entire stream into one batch. Oversized samples are reported in
/// the outcome rather than dropped silently.
pub fn pack_all<I>(samples: I, capacity: usize, policy: PackPolicy) -> Result<PackOutcome>
where
    I: IntoIterator<Item = SeqSample>,
{
    let mut packer = Packer::new(capacity, policy)?;
    let mut contexts = Vec::new();
    let mut rejected = Vec::new();
    for sample in samples {
        let event = packer.push(sample);
        contexts.extend(event.closed);
        rejected.extend(event.rejected);
    }
    contexts.extend(packer.finish());
    contexts.sort_by_key(|c| c.created);
    Ok(PackOutcome {
        batch: PackedBatch { capacity, contexts },
        rejected,
    })
}

fn validate_context(ctx: &Context, capacity: usize, index: usize) -> Result<()> {
    let mut expected_offset = 0usize;
    for (s, seg) in ctx.segments.iter().enumerate() {
        if seg.length == 0 {
            return Err(Error::CorruptBatch(format!(
                "context {index} segment {s} has zero length"
            )));
        }
        if seg.offset != expected_offset {
            return Err(Error::CorruptBatch(format!(
                "context {index} segment {s} offset {} breaks contiguity (expected {expected_offset})",
                seg.offset
            )));
        }
        expected_offset += seg.length;
    }
    if expected_offset > capacity {
        return Err(Error::CorruptBatch(format!(
            "context {index} holds {expected_offset} tokens over capacity {capacity}"
        )));
    }
    if ctx.payload.len() != expected_offset {
        return Err(Error::CorruptBatch(format!(
            "context {index} payload length {} does not match segment total {expected_offset}",
            ctx.payload.len()
        )));
    }
    if ctx.segment_ids.len() != expected_offset {
        return Err(Error::CorruptBatch(format!(
            "context {index} segment_ids length {} does not match segment total {expected_offset}",
            ctx.segment_ids.len()
        )));
    }
    for (s, seg) in ctx.segments.iter().enumerate() {
        for t in seg.offset..seg.offset + seg.length {
            if ctx.segment_ids[t] != s as u32 {
                return Err(Error::CorruptBatch(format!(
                    "context {index} token {t} has segment id {} (expected {s})",
                    ctx.segment_ids[t]
                )));
            }
        }
    }
    Ok(())
}

/// Recover every sample, validating batch structure along the way.
pub fn unpack(batch: &PackedBatch) -> Result<Vec<SeqSample>> {
    let mut out = Vec::new();
    for (i, ctx) in batch.contexts.iter().enumerate() {
        validate_context(ctx, batch.capacity, i)?;
        for seg in &ctx.segments {
            out.push(SeqSample {
                id: seg.id.clone(),
                payload: ctx.payload[seg.offset..seg.offset + seg.length].to_vec(),
            });
        }
    }
    Ok(out)
}

/// Block-diagonal causal mask for one context: `(q, k)` is allowed iff the
/// tokens share a segment and `k <= q`.
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n + k]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

pub fn attention_mask(batch: &PackedBatch, context_index: usize) -> Result<AttentionMask> {
    let ctx = batch
        .contexts
        .get(context_index)
        .ok_or_else(|| Error::invalid(format!("context index {context_index} out of range")))?;
    validate_context(ctx, batch.capacity, context_index)?;
    let n = ctx.tokens();
    let mut allowed = vec![false; n * n];
    for seg in &ctx.segments {
        for q in seg.offset..seg.offset + seg.length {
            for k in seg.offset..=q {
                allowed[q * n + k] = true;
            }
        }
    }
    Ok(AttentionMask { n, allowed })
}

/// Serialized form of a batch: a JSON segment table plus a separate integer
/// payload blob.
#[derive(Debug, Serialize, Deserialize)]
struct BatchTable {
    capacity: usize,
    contexts: Vec<ContextEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextEntry {
    blob_offset: usize,
    tokens: usize,
    segments: Vec<Segment>,
}

/// Integer payload blob, laid out like the float tensor format: magic
/// `NVI1`, u8 rank, u64 little-endian dims, then i64 little-endian values.
const BLOB_MAGIC: [u8; 4] = *b"NVI1";

pub fn write_payload_blob<W: Write>(mut w: W, values: &[i64]) -> Result<()> {
    w.write_all(&BLOB_MAGIC)?;
    w.write_all(&[1u8])?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_payload_blob<R: Read>(mut r: R) -> Result<Vec<i64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if magic != BLOB_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02X?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if rank[0] != 1 {
        return Err(Error::Format(format!("expected rank 1 blob, got {}", rank[0])));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let count = u64::from_le_bytes(len) as usize;
    let mut payload = vec![0u8; count * 8];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated payload".into()))?;
    Ok(payload
        .chunks_exact(8)
        .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Write the JSON segment table to `table_path` and the concatenated token
/// payload blob to `blob_path`.
pub fn write_batch_files(batch: &PackedBatch, table_path: &Path, blob_path: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(batch.contexts.len());
    let mut blob = Vec::new();
    for ctx in &batch.contexts {
        entries.push(ContextEntry {
            blob_offset: blob.len(),
            tokens: ctx.tokens(),
            segments: ctx.segments.clone(),
        });
        blob.extend_from_slice(&ctx.payload);
    }
    let table = BatchTable { capacity: batch.capacity, contexts: entries };
    let json = serde_json::to_string_pretty(&table)
        .map_err(|e| Error::Format(format!("serializing batch table: {e}")))?;
    std::fs::write(table_path, json.as_bytes())?;
    let file = std::fs::File::create(blob_path)?;
    write_payload_blob(std::io::BufWriter::new(file), &blob)
}

pub fn read_batch_files(table_path: &Path, blob_path: &Path) -> Result<PackedBatch> {
    let json = std::fs::read_to_string(table_path)?;
    let table: BatchTable =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("batch table: {e}")))?;
    let file = std::fs::File::open(blob_path)?;
    let blob = read_payload_blob(std::io::BufReader::new(file))?;
    let mut contexts = Vec::with_capacity(table.contexts.len());
    for (i, entry) in table.contexts.into_iter().enumerate() {
        let end = entry
            .blob_offset
            .checked_add(entry.tokens)
            .filter(|&e| e <= blob.len())
            .ok_or_else(|| {
                Error::CorruptBatch(format!("context {i} payload range exceeds blob"))
            })?;
        let payload = blob[entry.blob_offset..end].to_vec();
        let mut segment_ids = Vec::with_capacity(payload.len());
        for (s, seg) in entry.segments.iter().enumerate() {
            segment_ids.extend(std::iter::repeat(s as u32).take(seg.length));
        }
        let ctx = Context { segments: entry.segments, payload, segment_ids, created: i };
        validate_context(&ctx, table.capacity, i)?;
        contexts.push(ctx);
    }
    Ok(PackedBatch { capacity: table.capacity, contexts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: &str, len: usize) -> SeqSample {
        let payload = (0..len as i64).map(|i| i + id.len() as i64 * 1000).collect();
        SeqSample::new(id, payload).unwrap()
    }

    /// Independent first-fit simulation: returns each sample's context index.
    fn first_fit_oracle(lengths: &[usize], capacity: usize) -> Vec<usize> {
        let mut remaining: Vec<usize> = Vec::new();
        let mut assignment = Vec::with_capacity(lengths.len());
        for &len in lengths {
            let mut placed = None;
            for (i, r) in remaining.iter_mut().enumerate() {
                if *r >= len {
                    *r -= len;
                    placed = Some(i);
                    break;
                }
            }
            let idx = placed.unwrap_or_else(|| {
                remaining.push(capacity - len);
                remaining.len() - 1
            });
            assignment.push(idx);
        }
        assignment
    }

    #[test]
    fn three_samples_fit_one_context() {
        let samples = vec![sample("a", 300), sample("b", 500), sample("c", 200)];
        let out = pack_all(samples, 1024, PackPolicy::FirstFit).unwrap();
        assert!(out.rejected.is_empty());
        assert_eq!(out.batch.contexts.len(), 1);
        assert_eq!(out.batch.packed_tokens(), 1000);
        assert!((out.batch.utilization() - 1000.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn exact_capacity_sample_fills_context() {
        let out = pack_all(vec![sample("a", 64)], 64, PackPolicy::FirstFit).unwrap();
        assert_eq!(out.batch.contexts.len(), 1);
        assert_eq!(out.batch.contexts[0].tokens(), 64);
        assert!((out.batch.utilization() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_sample_reported_not_dropped() {
        let out = pack_all(
            vec![sample("big", 100), sample("ok", 10)],
            64,
            PackPolicy::FirstFit,
        )
        .unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].id, "big");
        assert_eq!(out.rejected[0].length, 100);
        let unpacked = unpack(&out.batch).unwrap();
        let ids: Vec<&str> = unpacked.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["ok"]);
    }

    #[test]
    fn first_fit_matches_reference_simulation() {
        let mut s = 1234u64;
        let lengths: Vec<usize> = (0..1000)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                1 + (s >> 33) as usize % 512
            })
            .collect();
        let samples: Vec<SeqSample> = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| sample(&format!("s{i:04}"), l))
            .collect();
        let out = pack_all(samples.clone(), 1024, PackPolicy::FirstFit).unwrap();
        let oracle = first_fit_oracle(&lengths, 1024);

        // Reconstruct the oracle's per-context id lists and compare; packed
        // contexts come out in creation order.
        let n_ctx = oracle.iter().max().unwrap() + 1;
        assert_eq!(out.batch.contexts.len(), n_ctx);
        let mut expected: Vec<Vec<&str>> = vec![Vec::new(); n_ctx];
        for (i, &ctx) in oracle.iter().enumerate() {
            expected[ctx].push(&samples[i].id);
        }
        for (ctx, ids) in out.batch.contexts.iter().zip(expected.iter()) {
            let got: Vec<&str> = ctx.segments.iter().map(|s| s.id.as_str()).collect();
            assert_eq!(&got, ids);
        }
        // Packing at least matches the one-sample-per-context baseline.
        let baseline = lengths.iter().sum::<usize>() as f64 / (lengths.len() * 1024) as f64;
        assert!(out.batch.utilization() >= baseline);
    }

    #[test]
    fn ffd_window_one_equals_first_fit() {
        let mut s = 777u64;
        let samples: Vec<SeqSample> = (0..500)
            .map(|i| {
                s = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                sample(&format!("s{i:03}"), 1 + (s >> 33) as usize % 256)
            })
            .collect();
        let ff = pack_all(samples.clone(), 512, PackPolicy::FirstFit).unwrap();
        let ffd = pack_all(samples, 512, PackPolicy::FirstFitDecreasing { window: 1 }).unwrap();
        let key = |b: &PackedBatch| -> Vec<Vec<(String, usize)>> {
            b.contexts
                .iter()
                .map(|c| c.segments.iter().map(|s| (s.id.clone(), s.length)).collect())
                .collect()
        };
        let mut a = key(&ff.batch);
        let mut b = key(&ffd.batch);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn ffd_improves_or_matches_utilization() {
        let mut s = 99u64;
        let samples: Vec<SeqSample> = (0..400)
            .map(|i| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                sample(&format!("s{i:03}"), 1 + (s >> 33) as usize % 512)
            })
            .collect();
        let ff = pack_all(samples.clone(), 1024, PackPolicy::FirstFit).unwrap();
        let ffd = pack_all(samples, 1024, PackPolicy::FirstFitDecreasing { window: 64 }).unwrap();
        assert!(ffd.batch.contexts.len() <= ff.batch.contexts.len());
    }

    #[test]
    fn unpack_round_trip_conserves_payloads() {
        let mut s = 31u64;
        let samples: Vec<SeqSample> = (0..200)
            .map(|i| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                sample(&format!("s{i:03}"), 1 + (s >> 33) as usize % 128)
            })
            .collect();
        for policy in [PackPolicy::FirstFit, PackPolicy::FirstFitDecreasing { window: 32 }] {
            let out = pack_all(samples.clone(), 256, policy).unwrap();
            let mut back = unpack(&out.batch).unwrap();
            let mut orig = samples.clone();
            back.sort_by(|a, b| a.id.cmp(&b.id));
            orig.sort_by(|a, b| a.id.cmp(&b.id));
            assert_eq!(back, orig);
            for ctx in &out.batch.contexts {
                assert!(ctx.tokens() <= 256);
            }
        }
    }

    #[test]
    fn unpack_singleton() {
        let s = sample("x", 5);
        let out = pack_all(vec![s.clone()], 16, PackPolicy::FirstFit).unwrap();
        assert_eq!(unpack(&out.batch).unwrap(), vec![s]);
    }

    #[test]
    fn corrupt_overlapping_segments_detected() {
        let out = pack_all(
            vec![sample("a", 4), sample("b", 4)],
            16,
            PackPolicy::FirstFit,
        )
        .unwrap();
        let mut batch = out.batch;
        batch.contexts[0].segments[1].offset = 2;
        let err = unpack(&batch).unwrap_err();
        assert!(matches!(err, Error::CorruptBatch(_)), "{err}");
    }

    #[test]
    fn corrupt_out_of_bounds_detected() {
        let out = pack_all(vec![sample("a", 4)], 16, PackPolicy::FirstFit).unwrap();
        let mut batch = out.batch;
        batch.contexts[0].segments[0].length = 9;
        assert!(matches!(unpack(&batch), Err(Error::CorruptBatch(_))));
    }

    #[test]
    fn mask_single_segment_is_lower_triangular() {
        let out = pack_all(vec![sample("a", 3)], 8, PackPolicy::FirstFit).unwrap();
        let mask = attention_mask(&out.batch, 0).unwrap();
        for q in 0..3 {
            for k in 0..3 {
                assert_eq!(mask.get(q, k), k <= q);
            }
        }
    }

    #[test]
    fn mask_blocks_cross_sample_attention() {
        let out = pack_all(vec![sample("a", 2), sample("b", 2)], 4, PackPolicy::FirstFit).unwrap();
        let mask = attention_mask(&out.batch, 0).unwrap();
        assert!(!mask.get(2, 1));
        assert!(!mask.get(3, 0));
        assert!(mask.get(2, 2));
        assert!(mask.get(3, 2));
        assert!(mask.get(1, 0));
        assert!(!mask.get(0, 1));
    }

    #[test]
    fn mask_matches_nested_loop_oracle() {
        let mut s = 17u64;
        let samples: Vec<SeqSample> = (0..40)
            .map(|i| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                sample(&format!("s{i:02}"), 1 + (s >> 33) as usize % 24)
            })
            .collect();
        let out = pack_all(samples, 64, PackPolicy::FirstFit).unwrap();
        for (ci, ctx) in out.batch.contexts.iter().enumerate() {
            let mask = attention_mask(&out.batch, ci).unwrap();
            let n = ctx.tokens();
            for q in 0..n {
                for k in 0..n {
                    let same = ctx.segment_ids[q] == ctx.segment_ids[k];
                    assert_eq!(mask.get(q, k), same && k <= q, "context {ci} ({q},{k})");
                }
            }
        }
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(PackPolicy::parse("first-fit").unwrap(), PackPolicy::FirstFit);
        assert_eq!(
            PackPolicy::parse("ffd:32").unwrap(),
            PackPolicy::FirstFitDecreasing { window: 32 }
        );
        assert!(PackPolicy::parse("ffd:0").is_err());
        assert!(PackPolicy::parse("best-fit").is_err());
    }

    #[test]
    fn batch_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![sample("a", 5), sample("b", 9), sample("c", 2)];
        let out = pack_all(samples, 12, PackPolicy::FirstFit).unwrap();
        let table = dir.path().join("batch.json");
        let blob = dir.path().join("batch.payload");
        write_batch_files(&out.batch, &table, &blob).unwrap();
        let back = read_batch_files(&table, &blob).unwrap();
        assert_eq!(back, out.batch);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn conservation_for_all_policies(
            lens in proptest::collection::vec(1usize..64, 1..120),
            window in 1usize..16,
            cap_extra in 0usize..64,
        ) {
            let capacity = 64 + cap_extra;
            let samples: Vec<SeqSample> = lens
                .iter()
                .enumerate()
                .map(|(i, &l)| sample(&format!("p{i:03}"), l))
                .collect();
            for policy in [PackPolicy::FirstFit, PackPolicy::FirstFitDecreasing { window }] {
                let out = pack_all(samples.clone(), capacity, policy).unwrap();
                prop_assert!(out.rejected.is_empty());
                let mut back = unpack(&out.batch).unwrap();
                let mut orig = samples.clone();
                back.sort_by(|a, b| a.id.cmp(&b.id));
                orig.sort_by(|a, b| a.id.cmp(&b.id));
                prop_assert_eq!(&back, &orig);
                for ctx in &out.batch.contexts {
                    prop_assert!(ctx.tokens() <= capacity);
                }
                let baseline = lens.iter().sum::<usize>() as f64 / (lens.len() * capacity) as f64;
                prop_assert!(out.batch.utilization() >= baseline - 1e-12);
            }
        }
    }
}
