//! LADF v1: a streamable little-endian store of block-input hidden states.
//!
//! Layout:
//!
//! ```text
//! header  : "LADF" | version u32 = 1 | n_layers u32 | d_model u32 | dtype u8 = 0 | 3 zero bytes
//! chunk*  : token_count u32 | token_count records of n_layers * d_model f32
//! ```
//!
//! Each record holds every layer's vector for one token position, layer 1
//! first. Chunks run until end of file; there is no chunk count.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LADF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
/// Encoded size of [`DumpHeader`].
pub const HEADER_BYTES: usize = 20;
/// Encoded size of a chunk's token-count prefix.
pub const CHUNK_HEADER_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub n_layers: u32,
    pub d_model: u32,
}

impl DumpHeader {
    pub fn new(n_layers: u32, d_model: u32) -> Result<Self> {
        let header = Self { n_layers, d_model };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 3 {
            return Err(Error::InvalidHeader(format!(
                "n_layers = {} but at least 3 are required",
                self.n_layers
            )));
        }
        if self.d_model < 1 {
            return Err(Error::InvalidHeader("d_model must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers as usize
    }

    pub fn d_model(&self) -> usize {
        self.d_model as usize
    }

    /// Number of f32 values in one token record.
    pub fn record_len(&self) -> usize {
        self.n_layers() * self.d_model()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&VERSION.to_le_bytes());
        out[8..12].copy_from_slice(&self.n_layers.to_le_bytes());
        out[12..16].copy_from_slice(&self.d_model.to_le_bytes());
        out[16] = DTYPE_F32;
        out
    }

    pub fn from_bytes(bytes: &[u8; HEADER_BYTES]) -> Result<Self> {
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes[16] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[16]));
        }
        if bytes[17..20] != [0, 0, 0] {
            return Err(Error::InvalidHeader("reserved bytes must be zero".into()));
        }
        let header = Self {
            n_layers: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            d_model: u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
        };
        header.validate()?;
        Ok(header)
    }
}

/// One calibration sequence: `token_count` records, layer-major per token.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleChunk {
    pub token_count: u32,
    pub payload: Vec<f32>,
}

impl SampleChunk {
    pub fn new(token_count: u32, payload: Vec<f32>) -> Self {
        Self {
            token_count,
            payload,
        }
    }

    /// Builds a chunk from per-token slices, which must share one shape.
    pub fn from_slices(slices: &[TokenSlice]) -> Self {
        let payload = slices
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .collect();
        Self::new(slices.len() as u32, payload)
    }

    fn check(&self, header: &DumpHeader) -> Result<()> {
        if self.token_count == 0 {
            return Err(Error::DimensionMismatch {
                what: "chunk token count (must be >= 1)",
                expected: 1,
                found: 0,
            });
        }
        let expected = self.token_count as usize * header.record_len();
        if self.payload.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "chunk payload length",
                expected,
                found: self.payload.len(),
            });
        }
        Ok(())
    }
}

/// Raw hidden states of every layer at one token position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSlice {
    n_layers: usize,
    d_model: usize,
    values: Vec<f32>,
}

impl TokenSlice {
    pub fn new(n_layers: usize, d_model: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_layers * d_model {
            return Err(Error::DimensionMismatch {
                what: "token slice length",
                expected: n_layers * d_model,
                found: values.len(),
            });
        }
        Ok(Self {
            n_layers,
            d_model,
            values,
        })
    }

    pub fn from_layers(layers: &[Vec<f32>]) -> Result<Self> {
        let d_model = layers.first().map_or(0, Vec::len);
        if let Some(bad) = layers.iter().find(|v| v.len() != d_model) {
            return Err(Error::DimensionMismatch {
                what: "layer vector length",
                expected: d_model,
                found: bad.len(),
            });
        }
        Self::new(layers.len(), d_model, layers.concat())
    }

    pub fn zeroed(n_layers: usize, d_model: usize) -> Self {
        Self {
            n_layers,
            d_model,
            values: vec![0.0; n_layers * d_model],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Hidden state entering layer `l` (0-based).
    pub fn layer(&self, l: usize) -> &[f32] {
        &self.values[l * self.d_model..(l + 1) * self.d_model]
    }

    pub fn layers(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d_model.max(1))
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// Incremental LADF writer; the header goes out on construction.
pub struct DumpWriter<W: Write> {
    sink: W,
    header: DumpHeader,
    bytes_written: u64,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut sink: W, header: DumpHeader) -> Result<Self> {
        header.validate()?;
        sink.write_all(&header.to_bytes())?;
        Ok(Self {
            sink,
            header,
            bytes_written: HEADER_BYTES as u64,
        })
    }

    pub fn header(&self) -> DumpHeader {
        self.header
    }

    pub fn write_chunk(&mut self, chunk: &SampleChunk) -> Result<()> {
        chunk.check(&self.header)?;
        self.write_records(chunk.token_count, &chunk.payload)
    }

    /// Writes a chunk directly from a flat value buffer.
    pub fn write_records(&mut self, token_count: u32, payload: &[f32]) -> Result<()> {
        let expected = token_count as usize * self.header.record_len();
        if token_count == 0 || payload.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "chunk payload length",
                expected,
                found: payload.len(),
            });
        }
        self.sink.write_all(&token_count.to_le_bytes())?;
        let mut buf = Vec::with_capacity(payload.len() * 4);
        for v in payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.sink.write_all(&buf)?;
        self.bytes_written += (CHUNK_HEADER_BYTES + buf.len()) as u64;
        Ok(())
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn finish(mut self) -> Result<(W, u64)> {
        self.sink.flush()?;
        Ok((self.sink, self.bytes_written))
    }
}

/// Writes a complete dump and returns the number of bytes produced.
pub fn write_dump<'a, W, I>(header: DumpHeader, samples: I, sink: W) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = &'a SampleChunk>,
{
    let mut writer = DumpWriter::new(sink, header)?;
    for chunk in samples {
        writer.write_chunk(chunk)?;
    }
    Ok(writer.finish()?.1)
}

/// Streaming LADF reader. Holds at most one token record in memory.
pub struct DumpReader<R: Read> {
    source: R,
    header: DumpHeader,
    remaining_in_chunk: u32,
    tokens_read: u64,
    chunks_read: u64,
    record: Vec<u8>,
    peak_buffered_bytes: usize,
    done: bool,
}

impl<R: Read> DumpReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let mut bytes = [0u8; HEADER_BYTES];
        read_exact_or(&mut source, &mut bytes, "dump header")?;
        let header = DumpHeader::from_bytes(&bytes)?;
        Ok(Self {
            source,
            header,
            remaining_in_chunk: 0,
            tokens_read: 0,
            chunks_read: 0,
            record: Vec::new(),
            peak_buffered_bytes: 0,
            done: false,
        })
    }

    pub fn header(&self) -> DumpHeader {
        self.header
    }

    pub fn tokens_read(&self) -> u64 {
        self.tokens_read
    }

    pub fn chunks_read(&self) -> u64 {
        self.chunks_read
    }

    /// Largest number of payload bytes this reader ever held at once.
    pub fn peak_buffered_bytes(&self) -> usize {
        self.peak_buffered_bytes
    }

    /// Reads the next token into `slice`, reusing its storage. Returns
    /// `false` at a clean end of stream.
    pub fn read_into(&mut self, slice: &mut TokenSlice) -> Result<bool> {
        if self.done {
            return Ok(false);
        }
        if self.remaining_in_chunk == 0 && !self.start_chunk()? {
            self.done = true;
            return Ok(false);
        }
        let len = self.header.record_len();
        self.record.resize(len * 4, 0);
        self.peak_buffered_bytes = self.peak_buffered_bytes.max(self.record.len());
        read_exact_or(&mut self.source, &mut self.record, "token record")?;

        if slice.n_layers != self.header.n_layers() || slice.d_model != self.header.d_model() {
            *slice = TokenSlice::zeroed(self.header.n_layers(), self.header.d_model());
        }
        let d = self.header.d_model();
        for (i, (dst, src)) in slice
            .values
            .iter_mut()
            .zip(self.record.chunks_exact(4))
            .enumerate()
        {
            let v = f32::from_le_bytes(src.try_into().unwrap());
            if !v.is_finite() {
                self.done = true;
                return Err(Error::NonFinite {
                    token: self.tokens_read,
                    layer: i / d,
                });
            }
            *dst = v;
        }
        self.remaining_in_chunk -= 1;
        self.tokens_read += 1;
        Ok(true)
    }

    fn start_chunk(&mut self) -> Result<bool> {
        let mut prefix = [0u8; CHUNK_HEADER_BYTES];
        let mut filled = 0;
        while filled < prefix.len() {
            match self.source.read(&mut prefix[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        match filled {
            0 => Ok(false),
            CHUNK_HEADER_BYTES => {
                let count = u32::from_le_bytes(prefix);
                if count == 0 {
                    return Err(Error::InvalidHeader(format!(
                        "chunk {} declares zero tokens",
                        self.chunks_read
                    )));
                }
                self.remaining_in_chunk = count;
                self.chunks_read += 1;
                Ok(true)
            }
            _ => Err(Error::Truncated("chunk header")),
        }
    }
}

impl<R: Read> Iterator for DumpReader<R> {
    type Item = Result<TokenSlice>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut slice = TokenSlice::zeroed(self.header.n_layers(), self.header.d_model());
        match self.read_into(&mut slice) {
            Ok(true) => Some(Ok(slice)),
            Ok(false) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_exact_or<R: Read>(source: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated(what),
        _ => Error::Io(e),
    })
}

/// Opens a dump file for buffered streaming.
pub fn read_dump(path: impl AsRef<Path>) -> Result<DumpReader<BufReader<File>>> {
    DumpReader::new(BufReader::new(File::open(path)?))
}

pub fn create_dump(
    path: impl AsRef<Path>,
    header: DumpHeader,
) -> Result<DumpWriter<BufWriter<File>>> {
    DumpWriter::new(BufWriter::new(File::create(path)?), header)
}

/// Several dump files read back to back as one logical stream. All headers
/// must agree on `n_layers` and `d_model`.
pub struct MultiDumpReader {
    header: DumpHeader,
    pending: std::vec::IntoIter<PathBuf>,
    current: DumpReader<BufReader<File>>,
    tokens_read: u64,
}

impl MultiDumpReader {
    pub fn open<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let Some(first) = paths.first() else {
            return Err(Error::InvalidHeader("no dump files given".into()));
        };
        let current = read_dump(first)?;
        let header = current.header();
        for p in &paths[1..] {
            let other = read_dump(p)?.header();
            if other.n_layers != header.n_layers {
                return Err(Error::DimensionMismatch {
                    what: "n_layers across dump files",
                    expected: header.n_layers(),
                    found: other.n_layers(),
                });
            }
            if other.d_model != header.d_model {
                return Err(Error::DimensionMismatch {
                    what: "d_model across dump files",
                    expected: header.d_model(),
                    found: other.d_model(),
                });
            }
        }
        let rest: Vec<PathBuf> = paths[1..]
            .iter()
            .map(|p| p.as_ref().to_path_buf())
            .collect();
        Ok(Self {
            header,
            pending: rest.into_iter(),
            current,
            tokens_read: 0,
        })
    }

    pub fn header(&self) -> DumpHeader {
        self.header
    }

    pub fn tokens_read(&self) -> u64 {
        self.tokens_read
    }

    pub fn read_into(&mut self, slice: &mut TokenSlice) -> Result<bool> {
        loop {
            if self.current.read_into(slice)? {
                self.tokens_read += 1;
                return Ok(true);
            }
            match self.pending.next() {
                Some(p) => self.current = read_dump(p)?,
                None => return Ok(false),
            }
        }
    }
}

/// Anything that yields token slices in file order under a fixed header.
pub trait TokenSource {
    fn header(&self) -> DumpHeader;
    fn read_into(&mut self, slice: &mut TokenSlice) -> Result<bool>;
}

impl<R: Read> TokenSource for DumpReader<R> {
    fn header(&self) -> DumpHeader {
        self.header
    }

    fn read_into(&mut self, slice: &mut TokenSlice) -> Result<bool> {
        DumpReader::read_into(self, slice)
    }
}

impl TokenSource for MultiDumpReader {
    fn header(&self) -> DumpHeader {
        self.header
    }

    fn read_into(&mut self, slice: &mut TokenSlice) -> Result<bool> {
        MultiDumpReader::read_into(self, slice)
    }
}
