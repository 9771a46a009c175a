use crate::digest::{digest_fields, ContentHash, ExecSignature, TaskIdentity};

use super::{canonicalize_params, Params, ResourceClass, WorkflowError};

const TAG_MODEL: u8 = 0x00;
const TAG_TASK: u8 = 0x01;
const TAG_EXEC: u8 = 0x02;

/// Digest standing in for a model's weights, keyed by its reference string.
pub fn model_hash(model_ref: &str) -> ContentHash {
    ContentHash(digest_fields(TAG_MODEL, [model_ref.as_bytes()]))
}

/// Exact-match identity over the full execution context.
///
/// Inputs are positional: permuting them changes the identity.
pub fn task_identity(
    model: &ContentHash,
    params: &Params,
    resource_class: ResourceClass,
    inputs: &[ContentHash],
) -> Result<TaskIdentity, WorkflowError> {
    let canonical = canonicalize_params(params)?;
    let count = (inputs.len() as u64).to_le_bytes();
    let head: [&[u8]; 4] = [
        model.as_bytes(),
        &canonical,
        resource_class.as_str().as_bytes(),
        &count,
    ];
    let fields = head.into_iter().chain(inputs.iter().map(|h| h.as_bytes().as_slice()));
    Ok(TaskIdentity(digest_fields(TAG_TASK, fields)))
}

/// Batch-compatibility signature; deliberately independent of inputs.
pub fn exec_signature(
    model: &ContentHash,
    params: &Params,
    resource_class: ResourceClass,
) -> Result<ExecSignature, WorkflowError> {
    let canonical = canonicalize_params(params)?;
    Ok(ExecSignature(digest_fields(
        TAG_EXEC,
        [model.as_bytes().as_slice(), &canonical, resource_class.as_str().as_bytes()],
    )))
}
