//! Record/replay cassettes: persist prompt->response pairs as JSONL during
//! a live run, then serve them back offline for bit-reproducible reruns.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GatewayError, GenParams, GenerationBackend};

#[derive(Debug, Serialize, Deserialize)]
struct CassetteEntry {
    prompt: String,
    response: String,
}

/// Wraps a live backend and appends every prompt/response pair to a sink.
pub struct RecordingBackend<B> {
    inner: B,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl<B: GenerationBackend> RecordingBackend<B> {
    pub fn new(inner: B, sink: Box<dyn Write + Send>) -> Self {
        RecordingBackend {
            inner,
            sink: Mutex::new(sink),
        }
    }

    pub fn to_path(inner: B, path: &Path) -> std::io::Result<Self> {
        let file = BufWriter::new(File::create(path)?);
        Ok(Self::new(inner, Box::new(file)))
    }
}

impl<B: GenerationBackend> GenerationBackend for RecordingBackend<B> {
    fn generate(&self, prompts: &[String], params: &GenParams) -> Result<Vec<String>, GatewayError> {
        let outputs = self.inner.generate(prompts, params)?;
        let mut sink = self.sink.lock().expect("cassette sink poisoned");
        for (prompt, response) in prompts.iter().zip(&outputs) {
            let entry = CassetteEntry {
                prompt: prompt.clone(),
                response: response.clone(),
            };
            let line = serde_json::to_string(&entry)
                .map_err(|e| GatewayError::Content(format!("cassette encode: {e}")))?;
            writeln!(sink, "{line}")
                .map_err(|e| GatewayError::Content(format!("cassette write: {e}")))?;
        }
        sink.flush()
            .map_err(|e| GatewayError::Content(format!("cassette flush: {e}")))?;
        Ok(outputs)
    }

    fn max_context_tokens(&self) -> usize {
        self.inner.max_context_tokens()
    }

    fn descriptor(&self) -> super::BackendDescriptor {
        self.inner.descriptor()
    }
}

/// Serves responses recorded earlier; any unseen prompt is an error.
pub struct ReplayBackend {
    map: HashMap<String, String>,
    max_context: usize,
}

impl ReplayBackend {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, GatewayError> {
        let mut map = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Content(format!("cassette read: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Content(format!("cassette line {}: {e}", idx + 1))
            })?;
            map.insert(entry.prompt, entry.response);
        }
        Ok(ReplayBackend {
            map,
            max_context: 1_000_000,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path)
            .map_err(|e| GatewayError::Content(format!("cassette open {}: {e}", path.display())))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl GenerationBackend for ReplayBackend {
    fn generate(&self, prompts: &[String], _params: &GenParams) -> Result<Vec<String>, GatewayError> {
        prompts
            .iter()
            .map(|p| {
                self.map.get(p).cloned().ok_or_else(|| {
                    GatewayError::Content("prompt not present in replay cassette".into())
                })
            })
            .collect()
    }

    fn max_context_tokens(&self) -> usize {
        self.max_context
    }
}
