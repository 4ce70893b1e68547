use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Steps per scale, coarse to fine.
pub const STEPS_PER_SCALE: [usize; 3] = [2, 3, 6];
pub const STEP_COUNT: usize = 11;
pub const MIN_GRID: usize = 4;

/// Scale of a grid position: 0 on the stride-4 anchors, 1 on the remaining
/// even positions, 2 elsewhere.
pub fn scale_of(row: usize, col: usize) -> usize {
    if row.is_multiple_of(4) && col.is_multiple_of(4) {
        0
    } else if row.is_multiple_of(2) && col.is_multiple_of(2) {
        1
    } else {
        2
    }
}

/// Global step index of a grid position.
///
/// S1 splits by the parity of `row/4 + col/4`. S2 takes the residue classes
/// `(2,2)`, `(0,2)`, `(2,0)` of `(row % 4, col % 4)` in that order. S3 takes
/// the classes `(1,1)`, `(0,1)`, `(1,0)` of `(row % 2, col % 2)`, each split by
/// the parity of `row/2 + col/2`.
pub fn step_of(row: usize, col: usize) -> usize {
    match scale_of(row, col) {
        0 => (row / 4 + col / 4) % 2,
        1 => match (row % 4, col % 4) {
            (2, 2) => 2,
            (0, 2) => 3,
            _ => 4,
        },
        _ => {
            let class = match (row % 2, col % 2) {
                (1, 1) => 0,
                (0, 1) => 1,
                _ => 2,
            };
            5 + class * 2 + (row / 2 + col / 2) % 2
        }
    }
}

pub fn scale_of_step(step: usize) -> usize {
    match step {
        0..=1 => 0,
        2..=4 => 1,
        _ => 2,
    }
}

/// Index one past the last step of `scale`.
pub fn scale_end(scale: usize) -> usize {
    STEPS_PER_SCALE[..=scale].iter().sum()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingStep {
    pub scale: usize,
    /// Row-major `(row, col)` positions.
    pub positions: Vec<(usize, usize)>,
}

/// Coarse-to-fine partition of a latent grid into 11 ordered steps.
/// Steps may be empty on small grids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingSchedule {
    h: usize,
    w: usize,
    steps: Vec<CodingStep>,
    step_map: Vec<u8>,
}

impl CodingSchedule {
    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn steps(&self) -> &[CodingStep] {
        &self.steps
    }

    pub fn step_at(&self, row: usize, col: usize) -> usize {
        self.step_map[row * self.w + col] as usize
    }

    /// Copy of `context` with every position of step `>= step` set to zero.
    pub fn mask_from(&self, context: &Tensor, step: usize) -> Result<Tensor> {
        self.check_grid(context)?;
        let mut out = context.clone();
        let s = out.shape();
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = out.plane_mut(n, c);
                for (v, &st) in plane.iter_mut().zip(&self.step_map) {
                    if st as usize >= step {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn check_grid(&self, t: &Tensor) -> Result<()> {
        let s = t.shape();
        if s.h != self.h || s.w != self.w {
            return Err(Error::invalid(format!(
                "tensor grid {}x{} does not match schedule {}x{}",
                s.h, s.w, self.h, self.w
            )));
        }
        Ok(())
    }
}

pub fn build_schedule(h: usize, w: usize) -> Result<CodingSchedule> {
    if h < MIN_GRID || w < MIN_GRID {
        return Err(Error::invalid(format!(
            "latent grid {h}x{w} smaller than {MIN_GRID}x{MIN_GRID}"
        )));
    }
    let mut steps: Vec<CodingStep> = (0..STEP_COUNT)
        .map(|s| CodingStep {
            scale: scale_of_step(s),
            positions: Vec::new(),
        })
        .collect();
    let mut step_map = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let s = step_of(r, c);
            steps[s].positions.push((r, c));
            step_map.push(s as u8);
        }
    }
    Ok(CodingSchedule { h, w, steps, step_map })
}

/// Nearest-neighbour fill from the completed scales up to and including
/// `scale`: every position takes the value of its stride-4 anchor
/// (`scale == 0`) or stride-2 anchor (`scale == 1`). `scale == 2` returns the
/// context unchanged. Fails unless `steps_done` covers the whole scale.
pub fn upscale_writeback(
    context: &Tensor,
    schedule: &CodingSchedule,
    scale: usize,
    steps_done: usize,
) -> Result<Tensor> {
    if scale > 2 {
        return Err(Error::invalid(format!("scale {scale} out of range")));
    }
    if steps_done < scale_end(scale) {
        return Err(Error::InvalidState(format!(
            "scale {scale} incomplete: {steps_done} of {} steps decoded",
            scale_end(scale)
        )));
    }
    schedule.check_grid(context)?;
    let stride = [4, 2, 1][scale];
    if stride == 1 {
        return Ok(context.clone());
    }
    let s = context.shape();
    Ok(Tensor::from_fn(s, |n, c, r, col| {
        context.at(n, c, r / stride * stride, col / stride * stride)
    }))
}
