//! Wire types: server snapshots, client commands and error frames.

use calm_core::alignment::KernelFamily;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One broadcast per control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub tick: usize,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub kv: f64,
    pub active_cluster: usize,
    /// Alignment posterior per cluster, possibly downsampled.
    pub posteriors: Vec<Vec<f64>>,
    pub log_marginals: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientCommand {
    Start,
    Pause,
    Reset,
    SetPosition(Vec<f64>),
    DragOffset(Vec<f64>),
    SetKernel(KernelFamily),
    SetStart(Vec<f64>),
}

/// Sent to a single client when its command is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub error: String,
    pub field: String,
}

impl ErrorFrame {
    pub fn new(field: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            error: error.into(),
            field: field.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error frame serializes")
    }
}

fn point(payload: Option<&Value>, dim: usize) -> Result<Vec<f64>, ErrorFrame> {
    let arr = payload
        .and_then(Value::as_array)
        .ok_or_else(|| ErrorFrame::new("payload", "expected an array of coordinates"))?;
    if arr.len() != dim {
        return Err(ErrorFrame::new(
            "payload",
            format!("dimension mismatch: expected {dim} coordinates, got {}", arr.len()),
        ));
    }
    arr.iter()
        .map(|v| v.as_f64().filter(|x| x.is_finite()))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| ErrorFrame::new("payload", "coordinates must be finite numbers"))
}

/// Parses and validates one client text frame against the model dimension.
pub fn parse_command(text: &str, dim: usize) -> Result<ClientCommand, ErrorFrame> {
    let v: Value = serde_json::from_str(text).map_err(|e| ErrorFrame::new("json", format!("malformed JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| ErrorFrame::new("json", "expected a JSON object"))?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| ErrorFrame::new("kind", "missing or non-string `kind`"))?;
    let payload = obj.get("payload");
    Ok(match kind {
        "start" => ClientCommand::Start,
        "pause" => ClientCommand::Pause,
        "reset" => ClientCommand::Reset,
        "set_position" => ClientCommand::SetPosition(point(payload, dim)?),
        "drag_offset" => ClientCommand::DragOffset(point(payload, dim)?),
        "set_start" => ClientCommand::SetStart(point(payload, dim)?),
        "set_kernel" => {
            let name = payload
                .and_then(Value::as_str)
                .ok_or_else(|| ErrorFrame::new("payload", "expected a kernel name"))?;
            ClientCommand::SetKernel(name.parse().map_err(|e| ErrorFrame::new("payload", format!("{e}")))?)
        }
        other => return Err(ErrorFrame::new("kind", format!("unknown command kind `{other}`"))),
    })
}

/// Sums a posterior into at most `cells` contiguous bins and renormalises.
pub fn downsample(post: &[f64], cells: usize) -> Vec<f64> {
    let n = post.len();
    if cells == 0 || n <= cells {
        return post.to_vec();
    }
    let mut out = vec![0.0; cells];
    for (i, p) in post.iter().enumerate() {
        out[i * cells / n] += p;
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
    out
}
