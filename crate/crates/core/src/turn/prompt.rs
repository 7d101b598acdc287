use crate::types::Modality;

/// `Modality: {User: <in>, Machine: <out>} <role>`; hybrid renders as "speech".
pub fn format_system_prompt(user: Modality, machine: Modality, role_instruction: &str) -> Result<String, PromptError> {
    if role_instruction.trim().is_empty() {
        return Err(PromptError::EmptyRole);
    }
    Ok(format!(
        "Modality: {{User: {}, Machine: {}}} {}",
        user.prompt_name(),
        machine.prompt_name(),
        role_instruction
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("role instruction must not be empty")]
    EmptyRole,
}
