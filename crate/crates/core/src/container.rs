//! Model container files holding either a lookup table or a CNN.

use std::fs;
use std::path::Path;

use crate::baseline::FrequencyTable;
use crate::cnn::{AdamHyper, AdamState, CnnConfig, CnnModel, ConvBlock, Precision, Scalar};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Window;
use crate::woperator::Classifier;

pub const MODEL_MAGIC: &[u8; 4] = b"WOPM";
pub const MODEL_VERSION: u32 = 1;

const KIND_CNN: &[u8; 8] = b"cnn\0\0\0\0\0";
const KIND_TABLE: &[u8; 8] = b"table\0\0\0";

/// Any model the toolkit can store and apply.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Table(FrequencyTable),
    CnnF32(CnnModel<f32>),
    CnnF64(CnnModel<f64>),
}

impl From<FrequencyTable> for AnyModel {
    fn from(t: FrequencyTable) -> Self {
        AnyModel::Table(t)
    }
}

impl From<CnnModel<f32>> for AnyModel {
    fn from(m: CnnModel<f32>) -> Self {
        AnyModel::CnnF32(m)
    }
}

impl From<CnnModel<f64>> for AnyModel {
    fn from(m: CnnModel<f64>) -> Self {
        AnyModel::CnnF64(m)
    }
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Table(_) => "table",
            _ => "cnn",
        }
    }

    pub fn window(&self) -> Window {
        match self {
            AnyModel::Table(t) => t.window().clone(),
            AnyModel::CnnF32(m) => m.window(),
            AnyModel::CnnF64(m) => m.window(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.bytes(match self {
            AnyModel::Table(_) => KIND_TABLE,
            _ => KIND_CNN,
        });
        w.window(&self.window());
        match self {
            AnyModel::Table(t) => t.encode(&mut w),
            AnyModel::CnnF32(m) => encode_cnn(m, &mut w),
            AnyModel::CnnF64(m) => encode_cnn(m, &mut w),
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::parse(4, format!("unsupported model version {version}")));
        }
        let kind_at = r.pos();
        let kind = r.take(8)?;
        let window = r.window()?;
        let model = if kind == KIND_TABLE {
            AnyModel::Table(FrequencyTable::decode(&mut r, window)?)
        } else if kind == KIND_CNN {
            decode_cnn(&mut r, &window)?
        } else {
            return Err(Error::parse(kind_at, "unknown model kind"));
        };
        if r.remaining() != 0 {
            return Err(r.err("trailing bytes after model"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl Classifier for AnyModel {
    fn input_len(&self) -> usize {
        match self {
            AnyModel::Table(t) => t.input_len(),
            AnyModel::CnnF32(m) => m.input_len(),
            AnyModel::CnnF64(m) => m.input_len(),
        }
    }

    fn is_trained(&self) -> bool {
        match self {
            AnyModel::Table(t) => t.is_trained(),
            AnyModel::CnnF32(m) => m.is_trained(),
            AnyModel::CnnF64(m) => m.is_trained(),
        }
    }

    fn predict_flat(&self, patches: &[u8]) -> Result<Vec<u8>> {
        match self {
            AnyModel::Table(t) => t.predict_flat(patches),
            AnyModel::CnnF32(m) => m.predict_flat(patches),
            AnyModel::CnnF64(m) => m.predict_flat(patches),
        }
    }
}

fn encode_cnn<T: Scalar>(m: &CnnModel<T>, w: &mut Writer) {
    let c = m.config();
    w.u32(c.window_w as u32);
    w.u32(c.window_h as u32);
    w.u32(c.blocks.len() as u32);
    for b in &c.blocks {
        w.u32(b.masks as u32);
        w.u32(b.mask_size as u32);
    }
    w.u32(c.fc_hidden as u32);
    w.u32(c.num_classes as u32);
    w.f64(c.dropout_rate);
    w.f64(c.learning_rate);
    w.u32(c.batch_size as u32);
    w.u32(c.epochs as u32);
    w.u64(c.seed);
    w.u8(T::WIDTH);
    let h = m.adam_hyper();
    w.f64(h.beta1);
    w.f64(h.beta2);
    w.f64(h.epsilon);
    w.u32(m.epochs_completed() as u32);
    w.u64(m.adam_state().t);
    let mut blob = Vec::new();
    for p in m.params() {
        p.iter().for_each(|v| v.write_le(&mut blob));
    }
    let st = m.adam_state();
    for t in st.m.iter().chain(&st.v) {
        t.iter().for_each(|v| v.write_le(&mut blob));
    }
    w.bytes(&blob);
}

fn decode_cnn(r: &mut Reader<'_>, window: &Window) -> Result<AnyModel> {
    let at = r.pos();
    let window_w = r.u32()? as usize;
    let window_h = r.u32()? as usize;
    let nblocks = r.u32()? as usize;
    if nblocks > r.remaining() / 8 {
        return Err(Error::parse(at + 8, "block count exceeds input"));
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        blocks.push(ConvBlock {
            masks: r.u32()? as usize,
            mask_size: r.u32()? as usize,
        });
    }
    let fc_hidden = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let dropout_rate = r.f64()?;
    let learning_rate = r.f64()?;
    let batch_size = r.u32()? as usize;
    let epochs = r.u32()? as usize;
    let seed = r.u64()?;
    let width_at = r.pos();
    let precision = match r.u8()? {
        4 => Precision::F32,
        8 => Precision::F64,
        other => return Err(Error::parse(width_at, format!("unsupported value width {other}"))),
    };
    let hyper = AdamHyper {
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
    };
    let epochs_completed = r.u32()? as usize;
    let adam_t = r.u64()?;
    let config = CnnConfig {
        window_w,
        window_h,
        blocks,
        fc_hidden,
        num_classes,
        dropout_rate,
        learning_rate,
        batch_size,
        epochs,
        seed,
        precision,
    };
    config.validate().map_err(|e| Error::parse(at, e.to_string()))?;
    if config.window().ok().as_ref() != Some(window) {
        return Err(Error::parse(at, "window spec disagrees with the CNN input size"));
    }
    if hyper != AdamHyper::default() {
        return Err(Error::parse(at, "unsupported optimizer constants"));
    }
    match precision {
        Precision::F32 => Ok(AnyModel::CnnF32(read_params(r, config, adam_t, epochs_completed)?)),
        Precision::F64 => Ok(AnyModel::CnnF64(read_params(r, config, adam_t, epochs_completed)?)),
    }
}

fn read_params<T: Scalar>(
    r: &mut Reader<'_>,
    config: CnnConfig,
    adam_t: u64,
    epochs_completed: usize,
) -> Result<CnnModel<T>> {
    let layout = config.param_layout()?;
    let width = T::WIDTH as usize;
    let read_set = |r: &mut Reader<'_>| -> Result<Vec<Vec<T>>> {
        layout
            .iter()
            .map(|(_, shape)| {
                let n: usize = shape.iter().product();
                let bytes = r.take(n * width)?;
                Ok(bytes.chunks(width).map(T::read_le).collect())
            })
            .collect()
    };
    let params = read_set(r)?;
    let m = read_set(r)?;
    let v = read_set(r)?;
    CnnModel::from_parts(config, params, Some(AdamState { m, v, t: adam_t }), epochs_completed)
}
