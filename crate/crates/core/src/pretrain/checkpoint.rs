//! Text checkpoint container.
//!
//! ```text
//! DEPVEC-CKPT v1
//! config {"embed_dim":100,...}
//! strategy context
//! vocab <lines>
//! <vocab lines>
//! tensors <count>
//! <name> <d1>x<d2> <values...>
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::gnn::{Model, ModelConfig};
use crate::lexical::SubwordVocab;
use crate::numerics::Tensor;

use super::Strategy;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "DEPVEC-CKPT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version `{found}` (supported: v{supported})")]
    Version { found: String, supported: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("malformed checkpoint at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn render_checkpoint(model: &Model, strategy: Strategy) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC} v{FORMAT_VERSION}").unwrap();
    writeln!(s, "config {}", serde_json::to_string(&model.config).expect("config serializes")).unwrap();
    writeln!(s, "strategy {strategy}").unwrap();
    let vocab = model.vocab.to_text();
    writeln!(s, "vocab {}", vocab.lines().count()).unwrap();
    s.push_str(&vocab);
    writeln!(s, "tensors {}", model.params.len()).unwrap();
    for (name, p) in model.params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        write!(s, "{name} {}", dims.join("x")).unwrap();
        for &v in p.value.data() {
            write!(s, " {:.8e}", v as f32).unwrap();
        }
        s.push('\n');
    }
    s.push_str("end\n");
    s
}

pub fn save_checkpoint(model: &Model, strategy: Strategy, path: &Path) -> Result<(), CheckpointError> {
    Ok(std::fs::write(path, render_checkpoint(model, strategy))?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Strategy), CheckpointError> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, CheckpointError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(CheckpointError::Truncated(format!("expected {what} after line {}", self.line))),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str, CheckpointError> {
        let l = self.next(key)?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.malformed(format!("expected `{key} ...`")))
    }

    fn count(&mut self, key: &str) -> Result<usize, CheckpointError> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.malformed(format!("bad {key} count `{v}`")))
    }

    fn malformed(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed {
            line: self.line,
            msg: msg.into(),
        }
    }
}

pub fn parse_checkpoint(text: &str) -> Result<(Model, Strategy), CheckpointError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.next("header")?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| lines.malformed("not a checkpoint file"))?;
    if version != format!("v{FORMAT_VERSION}") {
        return Err(CheckpointError::Version {
            found: version.to_string(),
            supported: FORMAT_VERSION,
        });
    }
    let config: ModelConfig =
        serde_json::from_str(lines.field("config")?).map_err(|e| lines.malformed(format!("config: {e}")))?;
    let strategy: Strategy = lines
        .field("strategy")?
        .parse()
        .map_err(|e: crate::Error| lines.malformed(e.to_string()))?;

    let n = lines.count("vocab")?;
    let mut vocab_text = String::new();
    for _ in 0..n {
        vocab_text.push_str(lines.next("vocab line")?);
        vocab_text.push('\n');
    }
    let vocab = SubwordVocab::from_text(&vocab_text).map_err(|e| lines.malformed(e.to_string()))?;
    let mut model = Model::random(config, vocab, 0).map_err(|e| lines.malformed(e.to_string()))?;

    let expected = model.params.len();
    let n = lines.count("tensors")?;
    let mut seen = 0;
    for _ in 0..n {
        let l = lines.next("tensor record")?;
        let mut parts = l.split(' ');
        let name = parts.next().unwrap_or_default();
        let dims = parts.next().ok_or_else(|| lines.malformed("tensor record without shape"))?;
        let shape = dims
            .split('x')
            .map(str::parse::<usize>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| lines.malformed(format!("bad shape `{dims}`")))?;
        let data = parts
            .map(|v| v.parse::<f32>().map(f64::from))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| lines.malformed(format!("bad value in `{name}`")))?;
        let numel: usize = shape.iter().product();
        if data.len() < numel {
            return Err(CheckpointError::Truncated(format!(
                "tensor `{name}` has {} of {numel} values",
                data.len()
            )));
        }
        if data.len() > numel {
            return Err(lines.malformed(format!("tensor `{name}` has {} values for shape {dims}", data.len())));
        }
        let value = Tensor::new(shape.clone(), data).map_err(|e| lines.malformed(e.to_string()))?;
        match model.params.get_mut(name) {
            Some(p) => {
                if p.value.shape() != shape.as_slice() {
                    return Err(CheckpointError::ShapeMismatch {
                        name: name.to_string(),
                        found: shape,
                        expected: p.value.shape().to_vec(),
                    });
                }
                p.value = value;
                seen += 1;
            }
            None => model.params.insert(name, value),
        }
    }
    if lines.next("end marker")? != "end" {
        return Err(lines.malformed("expected `end`"));
    }
    if seen != expected {
        return Err(CheckpointError::Truncated(format!("{seen} of {expected} model tensors present")));
    }
    Ok((model, strategy))
}
