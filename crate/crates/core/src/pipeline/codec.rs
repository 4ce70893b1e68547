use std::collections::HashMap;

use super::gop::{coding_order, FrameKind, FramePlan, GopConfig};
use super::media::Frame;
use super::model::Model;
use crate::bitstream::{
    read_sequence, write_sequence, FrameHeader, FrameRecord, SequenceHeader, MIN_DIMENSION, STREAM_VERSION,
};
use crate::entropy::Beta;
use crate::error::{Error, Result};
use crate::hpcm::{condition_features, decode_latent, encode_latent, hyper_decode, hyper_encode, LatentConfig};
use crate::temporal::{
    classify_reliability, dequantize_alpha, derive_temporal_feature, extract_hybrid, gate_feature, intra_feature,
    merge_bidirectional, quantize_alpha, BufferState, TemporalFeature,
};
use crate::tensor::Tensor;
use crate::transforms::{analyze, synthesize, CodingMode, QualityConfig, FRAME_ALIGN, PATCH};

/// Smallest latent grid the context model schedules over.
const LATENT_ALIGN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    width: usize,
    height: usize,
    pad_right: usize,
    pad_bottom: usize,
}

impl Geometry {
    fn new(width: usize, height: usize) -> Result<Self> {
        if width < MIN_DIMENSION as usize
            || height < MIN_DIMENSION as usize
            || width > u16::MAX as usize
            || height > u16::MAX as usize
        {
            return Err(Error::invalid(format!(
                "frame size {width}x{height} outside [16, 65535]"
            )));
        }
        let pad = |v: usize| (FRAME_ALIGN - v % FRAME_ALIGN) % FRAME_ALIGN;
        Ok(Self {
            width,
            height,
            pad_right: pad(width),
            pad_bottom: pad(height),
        })
    }

    fn padded(&self) -> (usize, usize) {
        (self.height + self.pad_bottom, self.width + self.pad_right)
    }

    fn trunk(&self) -> (usize, usize) {
        let (h, w) = self.padded();
        (h / PATCH, w / PATCH)
    }

    fn latent(&self) -> (usize, usize) {
        let (h, w) = self.padded();
        (h / FRAME_ALIGN, w / FRAME_ALIGN)
    }

    fn latent_padded(&self) -> (usize, usize) {
        let (h, w) = self.latent();
        let up = |v: usize| v.div_ceil(LATENT_ALIGN).max(1) * LATENT_ALIGN;
        (up(h), up(w))
    }
}

/// Encoder knobs that do not change the stream format.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Gate code forced on every inter frame instead of the classifier output.
    pub alpha_override: Option<u16>,
}

/// Per-frame record of one coding pass, in coding order.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInfo {
    pub index: usize,
    pub kind: FrameKind,
    pub alpha_code: u16,
    /// Dequantized gate value fed to the gating step, `None` for intra frames.
    pub gate_input: Option<f64>,
    pub hyper_bytes: usize,
    pub main_bytes: usize,
    /// Ideal code lengths under the coding pmfs; encoder side only.
    pub ideal_y_bits: f64,
    pub ideal_z_bits: f64,
}

#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub stream: Vec<u8>,
    /// Encoder-side reconstructions in display order.
    pub reconstructions: Vec<Frame>,
    pub frames: Vec<FrameInfo>,
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    pub header: SequenceHeader,
    /// Display order.
    pub frames: Vec<Frame>,
    /// Coding order.
    pub info: Vec<FrameInfo>,
}

/// Temporal state shared by encoder and decoder.
struct Session<'m> {
    model: &'m Model,
    mode: CodingMode,
    geo: Geometry,
    uni: Option<BufferState>,
    bi: BufferState,
    stored: HashMap<usize, Tensor>,
}

struct Reconstructed {
    x_hat: Tensor,
    f_d: Tensor,
    f_r: Tensor,
}

impl<'m> Session<'m> {
    fn new(model: &'m Model, mode: CodingMode, geo: Geometry) -> Self {
        Self {
            model,
            mode,
            geo,
            uni: None,
            bi: BufferState::bi(),
            stored: HashMap::new(),
        }
    }

    fn prior(&self, q: &QualityConfig) -> Tensor {
        let (h, w) = self.geo.trunk();
        Tensor::broadcast_channels(&q.f_p, h, w)
    }

    fn stored(&self, index: usize) -> Result<&Tensor> {
        self.stored
            .get(&index)
            .ok_or_else(|| Error::InvalidState(format!("reference frame {index} not decoded yet")))
    }

    /// Ungated temporal feature of an inter frame.
    fn reference(&mut self, kind: FrameKind, q: &QualityConfig) -> Result<Option<TemporalFeature>> {
        let tw = &self.model.weights.temporal;
        match kind {
            FrameKind::Intra => Ok(None),
            FrameKind::Predicted(None) => {
                let state = self
                    .uni
                    .as_ref()
                    .and_then(BufferState::state)
                    .ok_or_else(|| Error::InvalidState("uni buffer empty".into()))?;
                Ok(Some(derive_temporal_feature(state, &q.q_f, tw)?))
            }
            FrameKind::Predicted(Some(r)) => Ok(Some(derive_temporal_feature(self.stored(r)?, &q.q_f, tw)?)),
            FrameKind::Bidirectional { bwd, fwd } => {
                let (b, f) = (self.stored(bwd)?.clone(), self.stored(fwd)?.clone());
                self.bi.set_references(b, f)?;
                let (b, f) = self.bi.references().expect("references just set");
                let fb = derive_temporal_feature(b, &q.q_f, tw)?;
                let ff = derive_temporal_feature(f, &q.q_f, tw)?;
                Ok(Some(merge_bidirectional(&fb, &ff, tw)?))
            }
        }
    }

    fn beta(&self, q: &QualityConfig, kind: FrameKind, alpha_code: u16) -> Beta {
        if kind == FrameKind::Intra || alpha_code == 0 {
            q.beta(CodingMode::Ai)
        } else {
            q.beta(self.mode)
        }
    }

    fn latent_config<'a>(&'a self, q: &QualityConfig, beta: Beta) -> LatentConfig<'a> {
        let (lh, lw) = self.geo.latent();
        LatentConfig {
            basis: &self.model.weights.basis,
            a: q.a,
            beta,
            valid_h: lh,
            valid_w: lw,
        }
    }

    fn encode_core(
        &self,
        x: &Tensor,
        temporal: &Tensor,
        q: &QualityConfig,
        beta: Beta,
    ) -> Result<(Vec<u8>, Vec<u8>, f64, f64, Reconstructed)> {
        let w = &self.model.weights;
        let (y, _) = analyze(x, temporal, q, &w.trunk)?;
        let (lh, lw) = self.geo.latent();
        let (ph, pw) = self.geo.latent_padded();
        let hc = hyper_encode(&y.pad_zero(pw - lw, ph - lh), &w.hyper)?;
        let cond = condition_features(&hc.latent, temporal, &w.hyper)?;
        let cfg = self.latent_config(q, beta);
        let lc = encode_latent(&y, &hc.latent, &cond, &cfg, &w.hpcm)?;
        let (x_hat, f_d, f_r) = synthesize(&lc.y_hat, temporal, q, &w.trunk)?;
        Ok((
            hc.payload,
            lc.payload,
            lc.ideal_bits,
            hc.ideal_bits,
            Reconstructed { x_hat, f_d, f_r },
        ))
    }

    fn decode_core(
        &self,
        hyper: &[u8],
        main: &[u8],
        temporal: &Tensor,
        q: &QualityConfig,
        beta: Beta,
    ) -> Result<Reconstructed> {
        let w = &self.model.weights;
        let (ph, pw) = self.geo.latent_padded();
        let latent = hyper_decode(hyper, ph, pw, &w.hyper)?;
        let cond = condition_features(&latent, temporal, &w.hyper)?;
        let cfg = self.latent_config(q, beta);
        let y_hat = decode_latent(main, &latent, &cond, &cfg, &w.hpcm)?;
        let (x_hat, f_d, f_r) = synthesize(&y_hat, temporal, q, &w.trunk)?;
        Ok(Reconstructed { x_hat, f_d, f_r })
    }

    /// Buffer bookkeeping after a frame is reconstructed.
    fn commit(&mut self, plan: &FramePlan, rec: &Reconstructed, q: &QualityConfig) -> Result<()> {
        if self.mode == CodingMode::Ai {
            return Ok(());
        }
        let tw = &self.model.weights.temporal;
        let f_tilde = extract_hybrid(&rec.f_d, &rec.f_r, tw)?;
        match self.mode {
            CodingMode::Ld => {
                if plan.kind == FrameKind::Intra || self.uni.is_none() {
                    let prior = self.prior(q);
                    match self.uni.as_mut() {
                        Some(buf) => buf.reset(prior)?,
                        None => self.uni = Some(BufferState::uni(prior)),
                    }
                }
                self.uni.as_mut().expect("initialized above").update(&f_tilde, tw)?;
            }
            _ => {
                self.stored.insert(plan.index, f_tilde);
            }
        }
        Ok(())
    }
}

fn mode_code(mode: CodingMode) -> u8 {
    mode.index() as u8
}

fn mode_from_code(code: u8) -> Result<CodingMode> {
    match code {
        0 => Ok(CodingMode::Ai),
        1 => Ok(CodingMode::Ld),
        2 => Ok(CodingMode::Ra),
        other => Err(Error::format(11, format!("unknown gop mode {other}"))),
    }
}

pub fn encode_sequence(frames: &[Frame], gop: &GopConfig, quality: usize, model: &Model) -> Result<Vec<u8>> {
    Ok(encode_sequence_with(frames, gop, quality, model, &EncodeOptions::default())?.stream)
}

pub fn encode_sequence_with(
    frames: &[Frame],
    gop: &GopConfig,
    quality: usize,
    model: &Model,
    options: &EncodeOptions,
) -> Result<EncodeOutput> {
    gop.validate()?;
    let q = model.weights.quality(quality)?;
    let first = frames.first().ok_or_else(|| Error::invalid("no frames to encode"))?;
    let geo = Geometry::new(first.width(), first.height())?;
    if frames
        .iter()
        .any(|f| f.width() != geo.width || f.height() != geo.height)
    {
        return Err(Error::invalid("frames differ in size"));
    }
    let frame_count = u16::try_from(frames.len()).map_err(|_| Error::invalid("more than 65535 frames"))?;
    let plan = coding_order(gop, frames.len())?;
    let mut session = Session::new(model, gop.mode, geo);
    let mut records = Vec::with_capacity(plan.len());
    let mut infos = Vec::with_capacity(plan.len());
    let mut recon: Vec<Option<Frame>> = vec![None; frames.len()];
    for p in &plan {
        let x = frames[p.index].to_tensor().pad_replicate(geo.pad_right, geo.pad_bottom);
        let f_star = session.reference(p.kind, q)?;
        let (alpha_code, temporal, gate_input) = match &f_star {
            None => (0, intra_feature(&q.f_p, geo.trunk().0, geo.trunk().1), None),
            Some(fs) => {
                let code = match options.alpha_override {
                    Some(c) => c,
                    None => quantize_alpha(classify_reliability(&x, fs, &model.weights.temporal)?),
                };
                let alpha = dequantize_alpha(code);
                (code, gate_feature(fs, alpha, &q.f_p)?, Some(alpha))
            }
        };
        let beta = session.beta(q, p.kind, alpha_code);
        let (hyper, main, y_bits, z_bits, rec) = session.encode_core(&x, &temporal.f, q, beta)?;
        session.commit(p, &rec, q)?;
        recon[p.index] = Some(Frame::from_tensor(&rec.x_hat, geo.width, geo.height)?);
        infos.push(FrameInfo {
            index: p.index,
            kind: p.kind,
            alpha_code,
            gate_input,
            hyper_bytes: hyper.len(),
            main_bytes: main.len(),
            ideal_y_bits: y_bits,
            ideal_z_bits: z_bits,
        });
        let header = FrameHeader {
            frame_mode: p.kind.code(),
            quality_index: quality as u8,
            alpha_code,
            pad_right: geo.pad_right as u8,
            pad_bottom: geo.pad_bottom as u8,
            hyper_len: 0,
            main_len: 0,
        };
        records.push(FrameRecord::new(header, hyper, main)?);
    }
    let header = SequenceHeader {
        version: STREAM_VERSION,
        width: geo.width as u16,
        height: geo.height as u16,
        frame_count,
        gop_mode: mode_code(gop.mode),
        intra_period: gop.intra_period as i16,
        gop_size: if gop.mode == CodingMode::Ra {
            gop.gop_size as u8
        } else {
            0
        },
        weight_hash: model.fingerprint(),
    };
    Ok(EncodeOutput {
        stream: write_sequence(&header, &records)?,
        reconstructions: recon.into_iter().map(|f| f.expect("every frame coded")).collect(),
        frames: infos,
    })
}

/// Reconstructs the coding configuration announced by a header.
pub fn gop_from_header(h: &SequenceHeader) -> Result<GopConfig> {
    let mode = mode_from_code(h.gop_mode)?;
    let gop = GopConfig {
        mode,
        intra_period: h.intra_period as i32,
        gop_size: if mode == CodingMode::Ra { h.gop_size as usize } else { 1 },
    };
    gop.validate().map_err(|e| Error::format(12, e.to_string()))?;
    Ok(gop)
}

pub fn decode_sequence(data: &[u8], model: &Model) -> Result<Vec<Frame>> {
    Ok(decode_sequence_detailed(data, model)?.frames)
}

pub fn decode_sequence_detailed(data: &[u8], model: &Model) -> Result<DecodeOutput> {
    let (header, records) = read_sequence(data)?;
    if header.weight_hash != model.fingerprint() {
        return Err(Error::decode(format!(
            "stream expects weights {:016x}, loaded {:016x}",
            header.weight_hash,
            model.fingerprint()
        )));
    }
    let gop = gop_from_header(&header)?;
    let geo =
        Geometry::new(header.width as usize, header.height as usize).map_err(|e| Error::format(5, e.to_string()))?;
    let plan = coding_order(&gop, header.frame_count as usize)?;
    let mut session = Session::new(model, gop.mode, geo);
    let mut frames: Vec<Option<Frame>> = vec![None; plan.len()];
    let mut info = Vec::with_capacity(plan.len());
    for (p, rec) in plan.iter().zip(&records) {
        let decode_frame = |session: &mut Session<'_>| -> Result<(Frame, FrameInfo)> {
            let h = &rec.header;
            if h.frame_mode != p.kind.code() {
                return Err(Error::decode(format!(
                    "frame mode {} where the gop structure expects {}",
                    h.frame_mode,
                    p.kind.code()
                )));
            }
            if (h.pad_right as usize, h.pad_bottom as usize) != (geo.pad_right, geo.pad_bottom) {
                return Err(Error::decode("padding disagrees with the frame size"));
            }
            let q = model
                .weights
                .quality(h.quality_index as usize)
                .map_err(|e| Error::decode(e.to_string()))?;
            let f_star = session.reference(p.kind, q)?;
            let (temporal, gate_input) = match &f_star {
                None => (intra_feature(&q.f_p, geo.trunk().0, geo.trunk().1), None),
                Some(fs) => {
                    let alpha = dequantize_alpha(h.alpha_code);
                    (gate_feature(fs, alpha, &q.f_p)?, Some(alpha))
                }
            };
            let beta = session.beta(q, p.kind, h.alpha_code);
            let r = session.decode_core(&rec.hyper, &rec.main, &temporal.f, q, beta)?;
            session.commit(p, &r, q)?;
            Ok((
                Frame::from_tensor(&r.x_hat, geo.width, geo.height)?,
                FrameInfo {
                    index: p.index,
                    kind: p.kind,
                    alpha_code: h.alpha_code,
                    gate_input,
                    hyper_bytes: rec.hyper.len(),
                    main_bytes: rec.main.len(),
                    ideal_y_bits: 0.0,
                    ideal_z_bits: 0.0,
                },
            ))
        };
        let (frame, fi) = decode_frame(&mut session).map_err(|e| e.at_frame(p.index))?;
        frames[p.index] = Some(frame);
        info.push(fi);
    }
    Ok(DecodeOutput {
        header,
        frames: frames.into_iter().map(|f| f.expect("every frame decoded")).collect(),
        info,
    })
}

/// Payload bytes per display-order frame.
pub fn payload_sizes(data: &[u8]) -> Result<Vec<usize>> {
    let (header, records) = read_sequence(data)?;
    let gop = gop_from_header(&header)?;
    let plan = coding_order(&gop, header.frame_count as usize)?;
    let mut sizes = vec![0; plan.len()];
    for (p, r) in plan.iter().zip(&records) {
        sizes[p.index] = r.payload_bytes();
    }
    Ok(sizes)
}
