use std::path::Path;

use serde::Serialize;
use specflow::FlowError;

use crate::CliResult;

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(FlowError::from)?;
    }
    std::fs::write(path, text).map_err(FlowError::from)?;
    Ok(())
}

/// Pretty JSON to `path`; the text is returned for echoing.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<String> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    write_text(path, &format!("{text}\n"))?;
    Ok(text)
}

/// Echo to stdout; a closed pipe is not an error.
pub fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}
