use crate::error::{Error, Result};
use crate::transforms::CodingMode;

/// Largest hierarchy size accepted for random access.
pub const MAX_GOP_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GopConfig {
    pub mode: CodingMode,
    /// `-1` for a single leading intra frame, otherwise the intra refresh interval.
    pub intra_period: i32,
    /// Random-access hierarchy size; ignored by the other modes.
    pub gop_size: usize,
}

impl GopConfig {
    pub fn all_intra() -> Self {
        Self {
            mode: CodingMode::Ai,
            intra_period: 1,
            gop_size: 1,
        }
    }

    pub fn low_delay(intra_period: i32) -> Self {
        Self {
            mode: CodingMode::Ld,
            intra_period,
            gop_size: 1,
        }
    }

    pub fn random_access(intra_period: i32, gop_size: usize) -> Self {
        Self {
            mode: CodingMode::Ra,
            intra_period,
            gop_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intra_period == 0 || self.intra_period < -1 || self.intra_period > i16::MAX as i32 {
            return Err(Error::invalid(format!("invalid intra period {}", self.intra_period)));
        }
        if self.mode == CodingMode::Ra {
            if !self.gop_size.is_power_of_two() || self.gop_size > MAX_GOP_SIZE {
                return Err(Error::invalid(format!(
                    "gop size {} must be a power of two up to {MAX_GOP_SIZE}",
                    self.gop_size
                )));
            }
            if self.intra_period > 0 && !(self.intra_period as usize).is_multiple_of(self.gop_size) {
                return Err(Error::invalid(format!(
                    "intra period {} is not a multiple of gop size {}",
                    self.intra_period, self.gop_size
                )));
            }
        }
        Ok(())
    }

    fn is_refresh(&self, index: usize) -> bool {
        index == 0 || (self.intra_period > 0 && index.is_multiple_of(self.intra_period as usize))
    }
}

/// One B-frame of the hierarchy, indices relative to the GOP start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RaEntry {
    pub frame: usize,
    pub bwd: usize,
    pub fwd: usize,
    pub level: usize,
}

/// Midpoint recursion over `[0, gop_size]`, depth first.
pub fn ra_schedule(gop_size: usize) -> Result<Vec<RaEntry>> {
    if !gop_size.is_power_of_two() {
        return Err(Error::invalid(format!("gop size {gop_size} is not a power of two")));
    }
    fn recurse(lo: usize, hi: usize, level: usize, out: &mut Vec<RaEntry>) {
        if hi - lo < 2 {
            return;
        }
        let mid = (lo + hi) / 2;
        out.push(RaEntry {
            frame: mid,
            bwd: lo,
            fwd: hi,
            level,
        });
        recurse(lo, mid, level + 1, out);
        recurse(mid, hi, level + 1, out);
    }
    let mut out = Vec::with_capacity(gop_size.saturating_sub(1));
    recurse(0, gop_size, 1, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Intra,
    /// Uni reference: the recurrent buffer (`None`) or a stored frame state.
    Predicted(Option<usize>),
    Bidirectional {
        bwd: usize,
        fwd: usize,
    },
}

impl FrameKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Intra => 0,
            Self::Predicted(_) => 1,
            Self::Bidirectional { .. } => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FramePlan {
    pub index: usize,
    pub kind: FrameKind,
}

/// Coding order of `frame_count` frames. In random access, a GOP endpoint
/// past the clip end is dropped and references to it fall back to the GOP
/// start frame.
pub fn coding_order(gop: &GopConfig, frame_count: usize) -> Result<Vec<FramePlan>> {
    gop.validate()?;
    let plan = |index, kind| FramePlan { index, kind };
    let mut out = Vec::with_capacity(frame_count);
    match gop.mode {
        CodingMode::Ai => out.extend((0..frame_count).map(|i| plan(i, FrameKind::Intra))),
        CodingMode::Ld => out.extend((0..frame_count).map(|i| {
            plan(
                i,
                if gop.is_refresh(i) {
                    FrameKind::Intra
                } else {
                    FrameKind::Predicted(None)
                },
            )
        })),
        CodingMode::Ra => {
            if frame_count == 0 {
                return Ok(out);
            }
            let g = gop.gop_size;
            let hierarchy = ra_schedule(g)?;
            out.push(plan(0, FrameKind::Intra));
            let mut start = 0;
            while start + 1 < frame_count {
                let end = start + g;
                if end < frame_count {
                    let kind = if gop.is_refresh(end) {
                        FrameKind::Intra
                    } else {
                        FrameKind::Predicted(Some(start))
                    };
                    out.push(plan(end, kind));
                }
                for e in &hierarchy {
                    let frame = start + e.frame;
                    if frame >= frame_count {
                        continue;
                    }
                    let fwd = if start + e.fwd >= frame_count {
                        start
                    } else {
                        start + e.fwd
                    };
                    out.push(plan(
                        frame,
                        FrameKind::Bidirectional {
                            bwd: start + e.bwd,
                            fwd,
                        },
                    ));
                }
                start = end;
            }
        }
    }
    Ok(out)
}
