//! Binary checkpoints: `VTNET1`, a `u64` entry count, then per entry a
//! `u32`-prefixed UTF-8 name, a `u32` rank, `u64` dims and little-endian
//! `f64` data. Two `meta.*` entries carry the configuration that the
//! parameter shapes do not pin down.

use super::{Cnn, ModelError, Result, Variant, VtnetConfig, VtnetModel};
use crate::io_util::atomic_write;
use crate::nn::{Conv2d, Gru, Linear, Tensor};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"VTNET1";

fn meta_entries(cfg: &VtnetConfig) -> Vec<(String, Tensor)> {
    let image = Tensor::from_vec(
        &[7],
        vec![
            cfg.image_width as f64,
            cfg.image_height as f64,
            cfg.input_size as f64,
            cfg.hidden_size as f64,
            cfg.conv_filters.0 as f64,
            cfg.conv_filters.1 as f64,
            cfg.kernel_size as f64,
        ],
    );
    let training = Tensor::from_vec(
        &[6],
        vec![
            cfg.max_epochs as f64,
            cfg.lr0,
            cfg.batch_size as f64,
            cfg.patience as f64,
            (cfg.seed >> 32) as f64,
            (cfg.seed & 0xffff_ffff) as f64,
        ],
    );
    vec![
        ("meta.shape".into(), image.expect("fixed shape")),
        ("meta.training".into(), training.expect("fixed shape")),
    ]
}

pub fn write_checkpoint(model: &VtnetModel) -> Vec<u8> {
    let mut entries: Vec<(String, Tensor)> = meta_entries(&model.config);
    entries.extend(model.named_params().into_iter().map(|(n, t)| (n, t.clone())));
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend((entries.len() as u64).to_le_bytes());
    for (name, t) in &entries {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ModelError::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<VtnetModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("missing VTNET1 magic".into()));
    }
    let count = r.u64()?;
    let mut entries: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ModelError::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| ModelError::Checkpoint(format!("entry `{name}` has implausible dims {dims:?}")))?;
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if entries.insert(name.clone(), Tensor::from_vec(&dims, data)?).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate entry `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes after last entry".into()));
    }
    from_entries(entries)
}

fn from_entries(mut e: BTreeMap<String, Tensor>) -> Result<VtnetModel> {
    fn take(e: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
        e.remove(name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing entry `{name}`")))
    }
    let shape = take(&mut e, "meta.shape")?;
    let training = take(&mut e, "meta.training")?;
    if shape.len() != 7 || training.len() != 6 {
        return Err(ModelError::Checkpoint("malformed meta entries".into()));
    }
    let t = training.data();
    let sh: Vec<usize> = shape.data().iter().map(|&v| v as usize).collect();

    let gru = if e.contains_key("gru.w_z") {
        let mut g = Gru::zeros(0, 0);
        for (name, slot) in g.named_mut() {
            *slot = take(&mut e, &format!("gru.{name}"))?;
        }
        g.check_shapes()?;
        Some(g)
    } else {
        None
    };
    let cnn = if e.contains_key("cnn.conv1.kernel") {
        let conv1 = Conv2d::from_parts(take(&mut e, "cnn.conv1.kernel")?, take(&mut e, "cnn.conv1.bias")?)?;
        let conv2 = Conv2d::from_parts(take(&mut e, "cnn.conv2.kernel")?, take(&mut e, "cnn.conv2.bias")?)?;
        Some(Cnn { conv1, conv2 })
    } else {
        None
    };
    let fc1 = Linear::from_parts(take(&mut e, "head.fc1.weight")?, take(&mut e, "head.fc1.bias")?)?;
    let fc2 = Linear::from_parts(take(&mut e, "head.fc2.weight")?, take(&mut e, "head.fc2.bias")?)?;
    if let Some(name) = e.keys().next() {
        return Err(ModelError::Checkpoint(format!("unexpected entry `{name}`")));
    }

    let variant = match (gru.is_some(), cnn.is_some()) {
        (true, true) => Variant::Vtnet,
        (true, false) => Variant::GruOnly,
        (false, true) => Variant::CnnOnly,
        (false, false) => return Err(ModelError::Checkpoint("neither branch present".into())),
    };
    let config = VtnetConfig {
        variant,
        input_size: sh[2],
        hidden_size: sh[3],
        conv_filters: (sh[4], sh[5]),
        kernel_size: sh[6],
        image_width: sh[0],
        image_height: sh[1],
        head_hidden: fc1.out_dim(),
        classes: fc2.out_dim(),
        max_epochs: t[0] as usize,
        lr0: t[1],
        batch_size: t[2] as usize,
        patience: t[3] as usize,
        seed: ((t[4] as u64) << 32) | t[5] as u64,
    };
    config.validate().map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let consistent = fc1.in_dim() == config.head_input_width()
        && fc2.in_dim() == fc1.out_dim()
        && gru
            .as_ref()
            .is_none_or(|g| g.input_size() == config.input_size && g.hidden_size() == config.hidden_size)
        && cnn.as_ref().is_none_or(|c| {
            c.conv1.in_channels() == 1
                && (c.conv1.out_channels(), c.conv2.out_channels()) == config.conv_filters
                && c.conv2.in_channels() == c.conv1.out_channels()
                && c.conv1.kernel_size() == config.kernel_size
                && c.conv2.kernel_size() == config.kernel_size
        });
    if !consistent {
        return Err(ModelError::Checkpoint("parameter shapes do not fit together".into()));
    }
    Ok(VtnetModel {
        config,
        gru,
        cnn,
        fc1,
        fc2,
        history: Vec::new(),
    })
}

pub fn save_checkpoint(model: &VtnetModel, path: &Path) -> Result<()> {
    atomic_write(path, &write_checkpoint(model)).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<VtnetModel> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
