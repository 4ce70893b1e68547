//! Container layout. All integers little-endian, fields packed.
//!
//! ```text
//! sequence header (29 bytes)
//!   0  magic "ULVC"
//!   4  version        u8
//!   5  width          u16
//!   7  height         u16
//!   9  frame_count    u16
//!  11  gop_mode       u8   0 = AI, 1 = LD, 2 = RA
//!  12  intra_period   i16  -1 = single leading intra
//!  14  gop_size       u8   RA hierarchy size, 0 otherwise
//!  15  weight_hash    u64
//!  23  reserved       6 bytes, zero
//! frame header (16 bytes), repeated frame_count times in coding order
//!   0  frame_mode     u8   0 = I, 1 = P, 2 = B
//!   1  quality_index  u8
//!   2  alpha_code     u16
//!   4  pad_right      u8
//!   5  pad_bottom     u8
//!   6  hyper_len      u32
//!  10  main_len       u32
//!  14  reserved       u16, zero
//!   followed by hyper_len + main_len payload bytes
//! ```

use crate::error::{Error, Result};

pub const STREAM_MAGIC: &[u8; 4] = b"ULVC";
pub const STREAM_VERSION: u8 = 1;
pub const SEQUENCE_HEADER_BYTES: usize = 29;
pub const FRAME_HEADER_BYTES: usize = 16;
pub const MIN_DIMENSION: u16 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceHeader {
    pub version: u8,
    pub width: u16,
    pub height: u16,
    pub frame_count: u16,
    pub gop_mode: u8,
    pub intra_period: i16,
    pub gop_size: u8,
    pub weight_hash: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub frame_mode: u8,
    pub quality_index: u8,
    pub alpha_code: u16,
    pub pad_right: u8,
    pub pad_bottom: u8,
    pub hyper_len: u32,
    pub main_len: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub header: FrameHeader,
    pub hyper: Vec<u8>,
    pub main: Vec<u8>,
}

impl FrameRecord {
    /// Builds a record whose header lengths match the payloads.
    pub fn new(mut header: FrameHeader, hyper: Vec<u8>, main: Vec<u8>) -> Result<Self> {
        header.hyper_len = u32::try_from(hyper.len()).map_err(|_| Error::invalid("hyper payload too large"))?;
        header.main_len = u32::try_from(main.len()).map_err(|_| Error::invalid("main payload too large"))?;
        Ok(Self { header, hyper, main })
    }

    pub fn payload_bytes(&self) -> usize {
        self.hyper.len() + self.main.len()
    }
}

fn validate_sequence(h: &SequenceHeader, offset: usize) -> Result<()> {
    if h.version != STREAM_VERSION {
        return Err(Error::format(offset + 4, format!("unsupported version {}", h.version)));
    }
    if h.width < MIN_DIMENSION || h.height < MIN_DIMENSION {
        return Err(Error::format(
            offset + 5,
            format!("frame size {}x{} below {MIN_DIMENSION}", h.width, h.height),
        ));
    }
    if h.gop_mode > 2 {
        return Err(Error::format(offset + 11, format!("unknown gop mode {}", h.gop_mode)));
    }
    if h.intra_period == 0 || h.intra_period < -1 {
        return Err(Error::format(
            offset + 12,
            format!("invalid intra period {}", h.intra_period),
        ));
    }
    Ok(())
}

pub fn write_sequence(header: &SequenceHeader, frames: &[FrameRecord]) -> Result<Vec<u8>> {
    validate_sequence(header, 0).map_err(|e| Error::invalid(e.to_string()))?;
    if frames.len() != header.frame_count as usize {
        return Err(Error::invalid(format!(
            "header announces {} frames, {} supplied",
            header.frame_count,
            frames.len()
        )));
    }
    let payload: usize = frames.iter().map(FrameRecord::payload_bytes).sum();
    let mut out = Vec::with_capacity(SEQUENCE_HEADER_BYTES + frames.len() * FRAME_HEADER_BYTES + payload);
    out.extend_from_slice(STREAM_MAGIC);
    out.push(header.version);
    out.extend_from_slice(&header.width.to_le_bytes());
    out.extend_from_slice(&header.height.to_le_bytes());
    out.extend_from_slice(&header.frame_count.to_le_bytes());
    out.push(header.gop_mode);
    out.extend_from_slice(&header.intra_period.to_le_bytes());
    out.push(header.gop_size);
    out.extend_from_slice(&header.weight_hash.to_le_bytes());
    out.extend_from_slice(&[0; 6]);
    for (i, f) in frames.iter().enumerate() {
        let h = &f.header;
        if h.hyper_len as usize != f.hyper.len() || h.main_len as usize != f.main.len() {
            return Err(Error::invalid(format!(
                "frame {i}: header lengths disagree with payloads"
            )));
        }
        if h.frame_mode > 2 {
            return Err(Error::invalid(format!(
                "frame {i}: unknown frame mode {}",
                h.frame_mode
            )));
        }
        out.push(h.frame_mode);
        out.push(h.quality_index);
        out.extend_from_slice(&h.alpha_code.to_le_bytes());
        out.push(h.pad_right);
        out.push(h.pad_bottom);
        out.extend_from_slice(&h.hyper_len.to_le_bytes());
        out.extend_from_slice(&h.main_len.to_le_bytes());
        out.extend_from_slice(&[0; 2]);
        out.extend_from_slice(&f.hyper);
        out.extend_from_slice(&f.main);
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.data.len() - self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}

pub fn read_sequence_header(data: &[u8]) -> Result<SequenceHeader> {
    let mut r = Reader { data, pos: 0 };
    read_header(&mut r)
}

fn read_header(r: &mut Reader<'_>) -> Result<SequenceHeader> {
    if r.take(4, "magic")? != STREAM_MAGIC {
        return Err(Error::format(0, "bad magic"));
    }
    let header = SequenceHeader {
        version: r.u8("version")?,
        width: r.u16("width")?,
        height: r.u16("height")?,
        frame_count: r.u16("frame count")?,
        gop_mode: r.u8("gop mode")?,
        intra_period: r.u16("intra period")? as i16,
        gop_size: r.u8("gop size")?,
        weight_hash: u64::from_le_bytes(r.array("weight hash")?),
    };
    let reserved_at = r.pos;
    if r.take(6, "reserved")?.iter().any(|&b| b != 0) {
        return Err(Error::format(reserved_at, "nonzero reserved bytes"));
    }
    validate_sequence(&header, 0)?;
    Ok(header)
}

pub fn read_sequence(data: &[u8]) -> Result<(SequenceHeader, Vec<FrameRecord>)> {
    let mut r = Reader { data, pos: 0 };
    let header = read_header(&mut r)?;
    let mut frames = Vec::with_capacity(header.frame_count as usize);
    for _ in 0..header.frame_count {
        let start = r.pos;
        let fh = FrameHeader {
            frame_mode: r.u8("frame mode")?,
            quality_index: r.u8("quality index")?,
            alpha_code: r.u16("alpha code")?,
            pad_right: r.u8("pad right")?,
            pad_bottom: r.u8("pad bottom")?,
            hyper_len: r.u32("hyper length")?,
            main_len: r.u32("main length")?,
        };
        if r.u16("reserved")? != 0 {
            return Err(Error::format(start + 14, "nonzero reserved bytes"));
        }
        if fh.frame_mode > 2 {
            return Err(Error::format(start, format!("unknown frame mode {}", fh.frame_mode)));
        }
        if fh.frame_mode == 0 && fh.alpha_code != 0 {
            return Err(Error::format(start + 2, "intra frame with nonzero alpha code"));
        }
        let hyper = r.take(fh.hyper_len as usize, "hyper payload")?.to_vec();
        let main = r.take(fh.main_len as usize, "main payload")?.to_vec();
        frames.push(FrameRecord {
            header: fh,
            hyper,
            main,
        });
    }
    if r.pos != data.len() {
        return Err(Error::format(r.pos, format!("{} trailing bytes", data.len() - r.pos)));
    }
    Ok((header, frames))
}
