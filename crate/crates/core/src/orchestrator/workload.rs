use thiserror::Error;

use crate::model::ConfigPoint;

/// Placeholders a launch template may reference.
pub const PLACEHOLDERS: [&str; 7] = [
    "model",
    "quant",
    "tokens",
    "idle_seconds",
    "device",
    "power_model",
    "iteration",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("workload command is empty")]
    Empty,
    #[error("workload command has unbalanced quoting")]
    Quoting,
    #[error("unknown placeholder {{{0}}} (known: {known})", known = PLACEHOLDERS.join(", "))]
    UnknownPlaceholder(String),
}

/// A shell-like command line with `{placeholder}` fields, split into argv
/// once and filled per run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadTemplate {
    source: String,
    argv: Vec<String>,
}

/// Values substituted into a template for one run.
#[derive(Debug, Clone, Copy)]
pub struct RunParams<'a> {
    pub config: &'a ConfigPoint,
    pub iteration: u32,
    pub token_target: u32,
    pub idle_seconds: f64,
}

impl WorkloadTemplate {
    pub fn parse(command: &str) -> Result<Self, TemplateError> {
        let argv = shlex::split(command).ok_or(TemplateError::Quoting)?;
        if argv.is_empty() {
            return Err(TemplateError::Empty);
        }
        for arg in &argv {
            for name in placeholder_names(arg) {
                if !PLACEHOLDERS.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder(name.to_string()));
                }
            }
        }
        Ok(Self {
            source: command.to_string(),
            argv,
        })
    }

    /// Builds a template from an already-split argv (no quoting rules).
    pub fn from_argv<I, S>(argv: I) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
        let quoted =
            shlex::try_join(argv.iter().map(String::as_str)).map_err(|_| TemplateError::Quoting)?;
        Self::parse(&quoted)
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn render(&self, params: &RunParams<'_>) -> Vec<String> {
        self.argv
            .iter()
            .map(|arg| substitute(arg, params))
            .collect()
    }
}

/// Identifier-shaped `{name}` fields in `arg`; other braces are literal.
fn placeholder_names(arg: &str) -> impl Iterator<Item = &str> {
    arg.split('{').skip(1).filter_map(|rest| {
        let (name, _) = rest.split_once('}')?;
        let ident = !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_');
        ident.then_some(name)
    })
}

fn value_of(name: &str, p: &RunParams<'_>) -> Option<String> {
    Some(match name {
        "model" => p.config.model.clone(),
        "quant" => p.config.quantization.to_string(),
        "tokens" => p.token_target.to_string(),
        "idle_seconds" => p.idle_seconds.to_string(),
        "device" => p.config.device.clone(),
        "power_model" => p.config.power_model.clone(),
        "iteration" => p.iteration.to_string(),
        _ => return None,
    })
}

// Single left-to-right pass; substituted values are never rescanned.
fn substitute(arg: &str, p: &RunParams<'_>) -> String {
    let mut out = String::with_capacity(arg.len());
    let mut rest = arg;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        match tail
            .split_once('}')
            .and_then(|(name, after)| Some((value_of(name, p)?, after)))
        {
            Some((value, after)) => {
                out.push_str(&value);
                rest = after;
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}
