//! UVM sequence generation from a fault list.
//!
//! The template uses `{{NAME}}`, `{{KEY}}`, `{{COUNT}}` and `{{ITEMS}}`
//! placeholders. The sequence name must be a plain identifier; the config key
//! is emitted inside a string literal with `\` and `"` escaped.

use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{FaultSet, FaultSite};

const TEMPLATE: &str = include_str!("sequence.sv.tmpl");

/// Class names the template uses from the UVM library, plus SystemVerilog
/// keywords likely to be typed as a name.
const RESERVED: &[&str] = &[
    "uvm_object",
    "uvm_sequence",
    "uvm_sequence_item",
    "uvm_component",
    "uvm_config_db",
    "class",
    "endclass",
    "function",
    "endfunction",
    "task",
    "endtask",
    "module",
    "endmodule",
    "typedef",
    "bit",
    "int",
    "string",
    "static",
    "virtual",
    "output",
    "input",
    "return",
    "new",
    "null",
    "rand",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UvmGenSpec {
    pub fault_file: PathBuf,
    pub sequence_name: String,
    pub agent_config_key: String,
    pub output_path: Option<PathBuf>,
}

pub const DEFAULT_CONFIG_KEY: &str = "fault_queue";

/// Checks `[A-Za-z_][A-Za-z0-9_]*` and rejects reserved names and the `uvm_` prefix.
pub fn validate_identifier(name: &str) -> Result<()> {
    let mut chars = name.chars();
    let legal = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !legal || RESERVED.contains(&name) || name.to_ascii_lowercase().starts_with("uvm_") {
        return Err(Error::IllegalIdentifier(name.to_string()));
    }
    Ok(())
}

fn escape_literal(s: &str) -> Result<String> {
    if s.is_empty() || s.chars().any(char::is_control) {
        return Err(Error::InvalidArgument("config key must be non-empty without control characters".into()));
    }
    Ok(s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Renders the sequence for `faults`, which are emitted in canonical order.
pub fn render_sequence(faults: &FaultSet, sequence_name: &str, agent_config_key: &str) -> Result<String> {
    validate_identifier(sequence_name)?;
    let key = escape_literal(agent_config_key)?;
    let mut items = String::new();
    for (i, s) in faults.sites().iter().enumerate() {
        items.push_str(&format!(
            "    item = {sequence_name}_fault_item::type_id::create(\"fault_{i}\");\n    \
             item.param_index = {}; item.bit_position = {};\n    faults.push_back(item);\n",
            s.param_index, s.bit
        ));
    }
    Ok(TEMPLATE
        .replace("{{ITEMS}}", &items)
        .replace("{{COUNT}}", &faults.len().to_string())
        .replace("{{KEY}}", &key)
        .replace("{{NAME}}", sequence_name))
}

/// Reads the fault file named by `spec` and renders it; writes the output
/// file too when `output_path` is set.
pub fn generate_sequence(spec: &UvmGenSpec) -> Result<String> {
    let faults = FaultSet::load(&spec.fault_file)?;
    let text = render_sequence(&faults, &spec.sequence_name, &spec.agent_config_key)?;
    if let Some(out) = &spec.output_path {
        write_sequence(out, &text)?;
    }
    Ok(text)
}

pub fn write_sequence(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

static ITEM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"item\.param_index = (\d+); item\.bit_position = (\d+);").expect("valid regex"));

/// Recovers the fault list from generated text.
pub fn extract_faults(text: &str) -> Result<FaultSet> {
    let mut sites = Vec::new();
    for c in ITEM_RE.captures_iter(text) {
        let p = c[1].parse().map_err(|_| Error::InvalidArgument(format!("bad param index {}", &c[1])))?;
        let b: u8 = c[2].parse().map_err(|_| Error::InvalidArgument(format!("bad bit {}", &c[2])))?;
        if b > 7 {
            return Err(Error::InvalidArgument(format!("bit {b} out of range")));
        }
        sites.push(FaultSite::new(p, b));
    }
    Ok(FaultSet::from_sites(sites))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers() {
        for ok in ["rift_seq", "_a1", "Seq"] {
            validate_identifier(ok).unwrap();
        }
        for bad in ["", "1seq", "a-b", "uvm_object", "UVM_mine", "class", "a b", "é"] {
            assert!(validate_identifier(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn canonical_order_and_count() {
        let f = FaultSet::from_sites(vec![FaultSite::new(12, 7), FaultSite::new(3, 4)]);
        let t = render_sequence(&f, "rift_seq", DEFAULT_CONFIG_KEY).unwrap();
        let a = t.find("param_index = 3;").unwrap();
        let b = t.find("param_index = 12;").unwrap();
        assert!(a < b);
        assert_eq!(t.matches("::type_id::create(").count(), 2);
        assert_eq!(extract_faults(&t).unwrap(), f);
        assert!(!t.contains("{{"));
    }

    #[test]
    fn key_is_escaped() {
        let t = render_sequence(&FaultSet::new(), "s", r#"a"b\c"#).unwrap();
        assert!(t.contains(r#""a\"b\\c""#));
        assert!(render_sequence(&FaultSet::new(), "s", "").is_err());
        assert!(render_sequence(&FaultSet::new(), "s", "a\nb").is_err());
    }
}
