//! JSON-RPC 2.0 envelope types for the three task methods.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::envelope::{Attachment, DomainClass, Goal};
use crate::phase::Phase;

pub const METHOD_SUBMIT: &str = "tasks/submit";
pub const METHOD_GET: &str = "tasks/get";
pub const METHOD_CANCEL: &str = "tasks/cancel";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;
pub const TASK_NOT_FOUND: i64 = -32001;
pub const TASK_NOT_CANCELABLE: i64 = -32002;
pub const SERVER_DRAINING: i64 = -32003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcRequest {
    pub jsonrpc: String,
    #[serde(default)]
    pub id: Value,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcResponse {
    pub jsonrpc: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl RpcResponse {
    pub fn ok(id: Value, result: Value) -> Self {
        Self {
            jsonrpc: "2.0".into(),
            id,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: Value, error: RpcError) -> Self {
        Self {
            jsonrpc: "2.0".into(),
            id,
            result: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SubmitParams {
    /// Client-chosen id. Echoed back, never used as the task id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Goal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubmitResult {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_task_id: Option<String>,
    pub domain: DomainClass,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TaskIdParams {
    pub task_id: String,
}

/// Checks the envelope shape; the method and params are validated by the
/// dispatcher.
pub fn parse_request(body: &[u8]) -> Result<RpcRequest, Box<RpcResponse>> {
    let value: Value = serde_json::from_slice(body).map_err(|e| Box::new(RpcResponse::err(Value::Null, RpcError::new(PARSE_ERROR, format!("parse error: {e}")))))?;
    let id = value.get("id").cloned().unwrap_or(Value::Null);
    if !value.is_object() {
        return Err(Box::new(RpcResponse::err(Value::Null, RpcError::new(INVALID_REQUEST, "request must be a single JSON object"))));
    }
    let req: RpcRequest = serde_json::from_value(value).map_err(|e| Box::new(RpcResponse::err(id.clone(), RpcError::new(INVALID_REQUEST, e.to_string()))))?;
    if req.jsonrpc != "2.0" {
        return Err(Box::new(RpcResponse::err(id, RpcError::new(INVALID_REQUEST, "jsonrpc must be \"2.0\""))));
    }
    if !matches!(req.id, Value::Null | Value::String(_) | Value::Number(_)) {
        return Err(Box::new(RpcResponse::err(Value::Null, RpcError::new(INVALID_REQUEST, "id must be a string, number or null"))));
    }
    Ok(req)
}

pub fn params<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, RpcError> {
    serde_json::from_value(value).map_err(|e| RpcError::new(INVALID_PARAMS, format!("invalid params: {e}")))
}
